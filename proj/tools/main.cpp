#include <iostream>

#include "s3cli.hpp"

int main(int argc, char** argv) { return s3::cli::run(argc, argv, std::cout, std::cerr); }
