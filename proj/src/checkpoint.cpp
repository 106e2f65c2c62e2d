#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "commitlink/encoder.hpp"

namespace commitlink {
namespace {

constexpr std::string_view kMagic = "COMMITLINK-ARCHIVE-1";

static_assert(std::endian::native == std::endian::little,
              "archives are written as little-endian float64");

}  // namespace

void save_archive(const std::string& path, const nlohmann::json& meta,
                  const ParameterStore& params) {
  nlohmann::json manifest;
  manifest["meta"] = meta;
  manifest["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& v = params[i]->value;
    manifest["tensors"].push_back({{"name", params.name(i)},
                                   {"shape", {v.rows(), v.cols()}},
                                   {"dtype", "float64"},
                                   {"offset", offset}});
    offset += static_cast<std::size_t>(v.size()) * sizeof(double);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write archive " + path);
  out << kMagic << '\n' << manifest.dump() << '\n';
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& v = params[i]->value;
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw DataError("short write to " + path);
}

namespace {

nlohmann::json read_header(std::ifstream& in, const std::string& path) {
  std::string magic, manifest;
  if (!std::getline(in, magic) || magic != kMagic) {
    throw DataError(path + " is not a parameter archive");
  }
  if (!std::getline(in, manifest)) throw DataError(path + ": missing manifest");
  return nlohmann::json::parse(manifest);
}

}  // namespace

nlohmann::json read_archive_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read archive " + path);
  return read_header(in, path).at("meta");
}

nlohmann::json load_archive(const std::string& path, ParameterStore& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read archive " + path);
  const auto manifest = read_header(in, path);
  const std::streampos data_start = in.tellg();
  std::size_t filled = 0;
  for (const auto& t : manifest.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    if (t.at("dtype").get<std::string>() != "float64") {
      throw DataError(path + ": unsupported dtype for " + name);
    }
    const auto idx = params.find(name);
    if (!idx) continue;
    const auto rows = t.at("shape")[0].get<Eigen::Index>();
    const auto cols = t.at("shape")[1].get<Eigen::Index>();
    auto& value = params[*idx]->value;
    if (value.rows() != rows || value.cols() != cols) {
      throw DataError(path + ": shape mismatch for " + name);
    }
    in.seekg(data_start + static_cast<std::streamoff>(t.at("offset").get<std::size_t>()));
    in.read(reinterpret_cast<char*>(value.data()),
            static_cast<std::streamsize>(value.size() * sizeof(double)));
    if (!in) throw DataError(path + ": truncated data for " + name);
    ++filled;
  }
  if (filled != params.size()) throw DataError(path + ": archive lacks some parameters");
  return manifest.at("meta");
}

}  // namespace commitlink
