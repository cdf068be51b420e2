#include "ulab/umds.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <vector>

using nlohmann::json;
namespace fs = std::filesystem;

namespace ulab {

namespace {

constexpr std::size_t kChunkRows = 4096;

std::string y_kind_string(LabelKind kind) {
  switch (kind) {
    case LabelKind::real: return "real";
    case LabelKind::cls: return "class";
    case LabelKind::onehot: return "onehot";
    default: throw ConfigError("UMDS: dataset must be labeled");
  }
}

LabelKind y_kind_parse(const std::string& s) {
  if (s == "real") return LabelKind::real;
  if (s == "class") return LabelKind::cls;
  if (s == "onehot") return LabelKind::onehot;
  throw IoError("UMDS: unknown y_kind " + s);
}

void write_f64_rows(std::ofstream& out, const Mat& m) {
  // buffered row-major writes; no second full copy of the matrix
  std::vector<double> buf;
  const std::size_t cols = static_cast<std::size_t>(m.cols());
  buf.resize(kChunkRows * cols);
  std::size_t filled = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) buf[filled * cols + static_cast<std::size_t>(j)] = m(i, j);
    if (++filled == kChunkRows) {
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(filled * cols * sizeof(double)));
      filled = 0;
    }
  }
  if (filled > 0)
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(filled * cols * sizeof(double)));
  if (!out) throw IoError("UMDS: write failure");
}

std::vector<char> read_exact(const fs::path& path, std::size_t expected_bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("UMDS: missing file " + path.string());
  in.seekg(0, std::ios::end);
  const std::size_t actual = static_cast<std::size_t>(in.tellg());
  if (actual != expected_bytes)
    throw IoError("UMDS: size mismatch for " + path.string() + ": expected " +
                  std::to_string(expected_bytes) + " bytes, found " + std::to_string(actual));
  in.seekg(0);
  std::vector<char> bytes(expected_bytes);
  in.read(bytes.data(), static_cast<std::streamsize>(expected_bytes));
  if (!in) throw IoError("UMDS: read failure for " + path.string());
  return bytes;
}

}  // namespace

void save_external_dataset(const Dataset& ds, const std::string& dir) {
  if (!host_is_little_endian()) throw IoError("UMDS requires a little-endian host");
  ds.validate();
  if (ds.label_kind == LabelKind::none) throw ConfigError("UMDS: dataset must be labeled");

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("UMDS: cannot create directory " + dir);

  const int k = ds.label_kind == LabelKind::onehot ? static_cast<int>(ds.y.cols())
                                                   : ds.num_clusters();
  json meta;
  meta["n"] = ds.n();
  meta["p"] = ds.p();
  meta["k"] = k;
  meta["y_kind"] = y_kind_string(ds.label_kind);
  meta["dtype"] = "f64le";
  meta["order"] = "row-major";
  meta["version"] = 1;
  {
    std::ofstream out(fs::path(dir) / "meta.json");
    if (!out) throw IoError("UMDS: cannot open meta.json for writing");
    out << meta.dump(2) << "\n";
  }
  {
    std::ofstream out(fs::path(dir) / "X.bin", std::ios::binary);
    if (!out) throw IoError("UMDS: cannot open X.bin for writing");
    write_f64_rows(out, ds.X);
  }
  {
    std::ofstream out(fs::path(dir) / "y.bin", std::ios::binary);
    if (!out) throw IoError("UMDS: cannot open y.bin for writing");
    write_f64_rows(out, ds.y);
  }
  {
    std::ofstream out(fs::path(dir) / "c.bin", std::ios::binary);
    if (!out) throw IoError("UMDS: cannot open c.bin for writing");
    out.write(reinterpret_cast<const char*>(ds.c.data()),
              static_cast<std::streamsize>(ds.c.size() * sizeof(std::uint32_t)));
    if (!out) throw IoError("UMDS: write failure for c.bin");
  }
}

Dataset load_external_dataset(const std::string& dir) {
  if (!host_is_little_endian()) throw IoError("UMDS requires a little-endian host");
  json meta;
  {
    std::ifstream in(fs::path(dir) / "meta.json");
    if (!in) throw IoError("UMDS: missing meta.json in " + dir);
    try {
      in >> meta;
    } catch (const json::exception& e) {
      throw IoError(std::string("UMDS: bad meta.json: ") + e.what());
    }
  }
  int n, p, k;
  std::string y_kind, dtype, order;
  try {
    n = meta.at("n").get<int>();
    p = meta.at("p").get<int>();
    k = meta.at("k").get<int>();
    y_kind = meta.at("y_kind").get<std::string>();
    dtype = meta.at("dtype").get<std::string>();
    order = meta.at("order").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError(std::string("UMDS: meta.json missing field: ") + e.what());
  }
  if (dtype != "f64le" || order != "row-major")
    throw IoError("UMDS: unsupported dtype/order in meta.json");
  if (n < 1 || p < 1 || k < 1) throw IoError("UMDS: invalid shape in meta.json");

  Dataset ds;
  ds.label_kind = y_kind_parse(y_kind);
  ds.provenance = Provenance::external;

  const std::size_t un = static_cast<std::size_t>(n);
  {
    const auto bytes = read_exact(fs::path(dir) / "X.bin", un * static_cast<std::size_t>(p) * 8);
    ds.X.resize(n, p);
    const double* src = reinterpret_cast<const double*>(bytes.data());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j) ds.X(i, j) = src[static_cast<std::size_t>(i) * p + j];
  }
  {
    const int ycols = ds.label_kind == LabelKind::onehot ? k : 1;
    const auto bytes = read_exact(fs::path(dir) / "y.bin", un * static_cast<std::size_t>(ycols) * 8);
    ds.y.resize(n, ycols);
    const double* src = reinterpret_cast<const double*>(bytes.data());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < ycols; ++j) ds.y(i, j) = src[static_cast<std::size_t>(i) * ycols + j];
  }
  {
    const auto bytes = read_exact(fs::path(dir) / "c.bin", un * 4);
    ds.c.resize(un);
    const std::uint32_t* src = reinterpret_cast<const std::uint32_t*>(bytes.data());
    for (std::size_t i = 0; i < un; ++i) {
      if (src[i] >= static_cast<std::uint32_t>(k))
        throw IoError("UMDS: cluster index out of range in c.bin");
      ds.c[i] = src[i];
    }
  }
  try {
    ds.validate();
  } catch (const ConfigError& e) {
    throw IoError(std::string("UMDS: invalid payload: ") + e.what());
  }
  return ds;
}

}  // namespace ulab
