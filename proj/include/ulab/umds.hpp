// UMDS (Universality Mixture DataSet) directory interchange format.
//
// Layout: meta.json + X.bin (n*p little-endian f64, row-major) + y.bin
// (n or n*k f64) + c.bin (n little-endian u32). Payload byte lengths must
// match the header-implied sizes exactly.
#pragma once

#include <string>

#include "ulab/mixture.hpp"

namespace ulab {

void save_external_dataset(const Dataset& ds, const std::string& dir);
Dataset load_external_dataset(const std::string& dir);

}  // namespace ulab
