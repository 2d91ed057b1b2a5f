#include "vgs/format.hpp"

#include <charconv>

#include "vgs/error.hpp"

namespace vgs {

std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc())
    throw NumericError("format_double: conversion failed");
  return std::string(buf, res.ptr);
}

}  // namespace vgs
