#include "automoe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "automoe/errors.hpp"

namespace automoe {
namespace {

constexpr char kMagic[8] = {'A', 'M', 'O', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError("truncated checkpoint header: " + path, ParseError::npos);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  nlohmann::json manifest;
  manifest["dtype"] = kPrecisionName;
  manifest["metadata"] = data.metadata;
  auto& entries = manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& nt : data.tensors) {
    const std::uint64_t bytes = nt.tensor.size() * sizeof(Real);
    entries.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  const std::string text = manifest.dump();

  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& nt : data.tensors) {
    out.write(reinterpret_cast<const char*>(nt.tensor.data()), static_cast<std::streamsize>(nt.tensor.size() * sizeof(Real)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("not an automoe checkpoint: " + path, 0);
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version), 8);
  const auto len = get<std::uint64_t>(in, path);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw ParseError("truncated manifest: " + path, 20);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("bad checkpoint manifest: ") + e.what(), 20 + (e.byte ? e.byte - 1 : 0));
  }

  CheckpointData data;
  try {
    data.metadata = manifest.at("metadata").get<std::map<std::string, std::string>>();
    const std::string dtype = manifest.at("dtype").get<std::string>();
    const bool is_f64 = dtype == "f64";
    if (!is_f64 && dtype != "f32") throw ParseError("unknown dtype " + dtype, ParseError::npos);
    for (const auto& e : manifest.at("tensors")) {
      Shape shape = e.at("shape").get<Shape>();
      const std::size_t n = shape_numel(shape);
      Tensor t(shape);
      if (is_f64 == (sizeof(Real) == 8)) {
        if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(n * sizeof(Real)))) {
          throw ParseError("truncated tensor data: " + e.at("name").get<std::string>(), ParseError::npos);
        }
      } else if (is_f64) {
        std::vector<double> buf(n);
        if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 8))) {
          throw ParseError("truncated tensor data", ParseError::npos);
        }
        for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<Real>(buf[i]);
      } else {
        std::vector<float> buf(n);
        if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4))) {
          throw ParseError("truncated tensor data", ParseError::npos);
        }
        for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<Real>(buf[i]);
      }
      data.tensors.push_back({e.at("name").get<std::string>(), std::move(t)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad checkpoint manifest: ") + e.what(), ParseError::npos);
  }
  return data;
}

}  // namespace automoe
