#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "s3/io.hpp"
#include "support.hpp"

using namespace s3;

namespace {

std::string io_message(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const IoError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ParsePoints, UnweightedAndWeighted) {
  std::istringstream a("x,y\n1,2\n\n3.5, 4\n");
  const auto p = parse_points(a);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p.points()[1].x, 3.5);
  EXPECT_EQ(p.weights()[0], 1.0);

  std::istringstream b("\xEF\xBB\xBFx,y,w\r\n0,0,0.25\r\n");
  const auto q = parse_points(b);
  ASSERT_EQ(q.size(), 1u);
  EXPECT_EQ(q.weights()[0], 0.25);
}

TEST(ParsePoints, HeaderOnlyIsEmpty) {
  std::istringstream in("x,y\n");
  EXPECT_TRUE(parse_points(in).empty());
}

TEST(ParsePoints, ErrorsCarryPathAndLine) {
  EXPECT_EQ(io_message([] {
              std::istringstream in("a,b\n");
              parse_points(in, "p.csv");
            }),
            "p.csv:1: expected header 'x,y' or 'x,y,w'");
  EXPECT_EQ(io_message([] {
              std::istringstream in("x,y\n1,2\n3\n");
              parse_points(in, "p.csv");
            }),
            "p.csv:3: expected 2 fields, got 1");
  EXPECT_EQ(io_message([] {
              std::istringstream in("x,y\n1,zz\n");
              parse_points(in, "p.csv");
            }),
            "p.csv:2: expected a number, got 'zz'");
  EXPECT_NE(io_message([] {
              std::istringstream in("x,y,w\n1,1,-2\n");
              parse_points(in, "p.csv");
            }).find("p.csv:2"),
            std::string::npos);
  EXPECT_NE(io_message([] {
              std::istringstream in("x,y\nnan,1\n");
              parse_points(in, "p.csv");
            }).find("p.csv:2"),
            std::string::npos);
  EXPECT_EQ(io_message([] {
              std::istringstream in("");
              parse_points(in, "p.csv");
            }),
            "p.csv: missing header 'x,y' or 'x,y,w'");
}

TEST(ParseGrid, FreeFormValues) {
  std::istringstream in("2,3,0.5\n1,2\n3,4,5\n6\n");
  const auto g = parse_grid(in);
  EXPECT_EQ(g.rows(), 2u);
  EXPECT_EQ(g.cols(), 3u);
  EXPECT_EQ(g.cell_size(), 0.5);
  EXPECT_EQ(g.at(1, 2), 6.0);
}

TEST(ParseGrid, Errors) {
  EXPECT_EQ(io_message([] {
              std::istringstream in("2,2\n");
              parse_grid(in, "g.csv");
            }),
            "g.csv:1: expected header 'rows,cols,cell_size'");
  EXPECT_EQ(io_message([] {
              std::istringstream in("2,2,1\n1,2,3\n");
              parse_grid(in, "g.csv");
            }),
            "g.csv: expected 4 values, got 3");
  EXPECT_EQ(io_message([] {
              std::istringstream in("0,2,1\n");
              parse_grid(in, "g.csv");
            }),
            "g.csv:1: grid dimensions must be positive");
  EXPECT_EQ(io_message([] {
              std::istringstream in("1,2,1\n1,-1\n");
              parse_grid(in, "g.csv");
            }),
            "g.csv:2: negative grid value");
}

TEST(RoundTrip, GridIsBitExact) {
  SceneRng rng(1);
  const GridMeasure g(3, 4, 0.75, s3test::random_weights(rng, 12, 0.0, 1e3));
  std::stringstream s;
  write_grid(s, g);
  const auto back = parse_grid(s);
  EXPECT_EQ(back.values(), g.values());
  EXPECT_EQ(back.cell_size(), g.cell_size());
}

TEST(RoundTrip, PointsAreBitExact) {
  SceneRng rng(2);
  const PointMeasure p(s3test::random_points(rng, 5, 10.0), s3test::random_weights(rng, 5));
  std::stringstream s;
  write_points(s, p);
  const auto back = parse_points(s);
  EXPECT_EQ(back.points(), p.points());
  EXPECT_EQ(back.weights(), p.weights());

  const PointMeasure unit(s3test::random_points(rng, 3, 10.0));
  std::stringstream u;
  write_points(u, unit);
  EXPECT_EQ(u.str().substr(0, 4), "x,y\n");
}

TEST(WritePgm, ScalesToTheMaximum) {
  std::ostringstream os;
  write_pgm(os, GridMeasure(1, 3, 1.0, {0.0, 0.5, 2.0}));
  EXPECT_EQ(os.str(), "P2\n3 1\n255\n0 64 255\n");
  std::ostringstream zero;
  write_pgm(zero, GridMeasure::zeros(2, 1, 1.0));
  EXPECT_EQ(zero.str(), "P2\n1 2\n255\n0\n0\n");
}

TEST(WriteFileAtomic, ReplacesWholeFile) {
  const auto dir = s3test::scratch_dir("atomic");
  const auto path = dir / "out.csv";
  write_file_atomic(path, [](std::ostream& os) { os << "first\n"; });
  write_file_atomic(path, [](std::ostream& os) { os << "second\n"; });
  std::ifstream in(path);
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(all, "second\n");
  EXPECT_FALSE(std::filesystem::exists(dir / "out.csv.tmp"));
  EXPECT_THROW(write_file_atomic(dir / "missing" / "x.csv", [](std::ostream&) {}), IoError);
}

TEST(ReadFiles, MissingPathIsAnIoError) {
  EXPECT_THROW(read_points("/nonexistent/p.csv"), IoError);
  EXPECT_THROW(read_grid("/nonexistent/g.csv"), IoError);
}
