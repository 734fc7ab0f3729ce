#ifndef SIMATTN_SIMATTN_HPP
#define SIMATTN_SIMATTN_HPP

#include "simattn/attention.hpp"
#include "simattn/data.hpp"
#include "simattn/eval.hpp"
#include "simattn/io.hpp"
#include "simattn/model.hpp"
#include "simattn/ops.hpp"
#include "simattn/rng.hpp"
#include "simattn/tensor.hpp"
#include "simattn/train.hpp"

#endif  // SIMATTN_SIMATTN_HPP
