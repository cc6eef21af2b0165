#ifndef S3_S3_HPP
#define S3_S3_HPP

// Everything except the oracle, which needs Eigen (include s3/oracle.hpp).

#include "s3/adam.hpp"
#include "s3/balanced.hpp"
#include "s3/entropy.hpp"
#include "s3/error.hpp"
#include "s3/fit.hpp"
#include "s3/io.hpp"
#include "s3/measures.hpp"
#include "s3/scale.hpp"
#include "s3/semibalanced.hpp"
#include "s3/softmin.hpp"

#endif  // S3_S3_HPP
