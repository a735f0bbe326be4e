#include "couda/checkpoint.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace couda {

namespace {

constexpr std::array<char, 8> kMagic{'C', 'O', 'U', 'D', 'A', 'C', 'K', '1'};

template <typename UInt>
void put(std::ostream& out, UInt v) {
  std::array<char, sizeof(UInt)> bytes{};
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <typename UInt>
UInt get(std::istream& in) {
  std::array<unsigned char, sizeof(UInt)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw ParseError("checkpoint", 0, "truncated stream");
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(bytes[i]) << (8 * i);
  return v;
}

// Encodes the architecture so load can rebuild the layer layout before
// copying parameters in.
NamedArray arch_record(const ArchitectureConfig& a) {
  std::vector<double> v{static_cast<double>(a.input_dim),      static_cast<double>(a.num_classes),
                        static_cast<double>(a.feature_dim),    a.noise_init_diagonal,
                        a.single_network ? 1.0 : 0.0,          static_cast<double>(a.extractor_hidden.size())};
  for (auto w : a.extractor_hidden) v.push_back(static_cast<double>(w));
  v.push_back(static_cast<double>(a.discriminator_hidden.size()));
  for (auto w : a.discriminator_hidden) v.push_back(static_cast<double>(w));
  const auto n = v.size();
  return {"arch", {n}, std::move(v)};
}

ArchitectureConfig parse_arch(const NamedArray& rec) {
  const auto& v = rec.values;
  std::size_t pos = 0;
  auto next = [&]() {
    if (pos >= v.size()) throw ParseError("checkpoint", 0, "truncated arch record");
    return v[pos++];
  };
  auto count = [&]() {
    const double d = next();
    if (d < 0 || d != std::floor(d) || d > 1e6) throw ParseError("checkpoint", 0, "corrupt arch record");
    return static_cast<std::size_t>(d);
  };
  ArchitectureConfig a;
  a.input_dim = count();
  a.num_classes = count();
  a.feature_dim = count();
  a.noise_init_diagonal = next();
  a.single_network = next() != 0.0;
  a.extractor_hidden.resize(count());
  for (auto& w : a.extractor_hidden) w = count();
  a.discriminator_hidden.resize(count());
  for (auto& w : a.discriminator_hidden) w = count();
  return a;
}

}  // namespace

void write_arrays(std::ostream& out, std::span<const NamedArray> arrays) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    std::size_t count = 1;
    for (auto d : a.shape) count *= d;
    if (count != a.values.size()) throw ShapeError("write_arrays", {a.shape}, a.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put<std::uint64_t>(out, d);
    for (double v : a.values) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw Error("checkpoint: write failed");
}

std::vector<NamedArray> read_arrays(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw ParseError("checkpoint", 0, "bad magic");
  const auto count = get<std::uint32_t>(in);
  std::vector<NamedArray> arrays;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name.resize(get<std::uint32_t>(in));
    in.read(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    const auto rank = get<std::uint32_t>(in);
    std::size_t total = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      a.shape.push_back(get<std::uint64_t>(in));
      total *= a.shape.back();
    }
    if (total > (std::size_t{1} << 32)) throw ParseError("checkpoint", 0, "implausible array size for " + a.name);
    a.values.resize(total);
    for (auto& v : a.values) v = std::bit_cast<double>(get<std::uint64_t>(in));
    arrays.push_back(std::move(a));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError("checkpoint", 0, "trailing bytes after last array");
  return arrays;
}

std::vector<NamedArray> to_arrays(const CoudaModel& model) {
  std::vector<NamedArray> out{arch_record(model.arch())};
  for (const auto& p : model.parameters()) {
    out.push_back({p.name, p.tensor.shape(), {p.tensor.values().begin(), p.tensor.values().end()}});
  }
  return out;
}

CoudaModel from_arrays(std::span<const NamedArray> arrays) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  auto it = by_name.find("arch");
  if (it == by_name.end()) throw ParseError("checkpoint", 0, "missing arch record");
  CoudaModel model(parse_arch(*it->second), 0);
  for (auto& p : model.parameters()) {
    auto found = by_name.find(p.name);
    if (found == by_name.end()) throw ParseError("checkpoint", 0, "missing parameter " + p.name);
    if (found->second->shape != p.tensor.shape()) {
      throw ShapeError("load_checkpoint", {found->second->shape, p.tensor.shape()}, p.name);
    }
    auto dst = p.tensor.mutable_values();
    std::copy(found->second->values.begin(), found->second->values.end(), dst.begin());
  }
  return model;
}

void save_checkpoint(const CoudaModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot open " + path.string() + " for writing");
  write_arrays(out, to_arrays(model));
}

CoudaModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path.string());
  return from_arrays(read_arrays(in));
}

}  // namespace couda
