#include "raimkit/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "raimkit/errors.hpp"

namespace raimkit::io {

namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor container IO assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.write(buf, sizeof(T));
}

template <typename T>
T take(std::istream& in, const char* what) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) {
    throw FormatError(std::string("corrupt tensor file: truncated while reading ") + what);
  }
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

constexpr std::uint32_t kMaxRank = 16;
constexpr std::uint32_t kMaxName = 1u << 16;

}  // namespace

void write_tensors(std::ostream& out, std::span<const ad::NamedTensor> tensors,
                   std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint64_t>(out, tensors.size());
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.tensor.rank()));
    for (auto d : t.tensor.shape()) put<std::uint64_t>(out, d);
    const auto data = t.tensor.data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!out) throw FormatError("failed writing tensor container");
}

std::vector<ad::NamedTensor> read_tensors(std::istream& in, std::string_view magic) {
  std::string got(magic.size(), '\0');
  if (!in.read(got.data(), static_cast<std::streamsize>(got.size()))) {
    throw FormatError("corrupt tensor file: truncated header");
  }
  if (got != magic) {
    throw FormatError("corrupt tensor file: bad magic (expected " + std::string(magic) + ")");
  }
  const auto version = take<std::uint32_t>(in, "version");
  if (version != kFormatVersion) {
    throw CompatibilityError("unsupported tensor container version " + std::to_string(version) +
                             " (this build reads version " + std::to_string(kFormatVersion) + ")");
  }
  const auto count = take<std::uint64_t>(in, "tensor count");
  std::vector<ad::NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = take<std::uint32_t>(in, "name length");
    if (name_len > kMaxName) throw FormatError("corrupt tensor file: implausible name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) {
      throw FormatError("corrupt tensor file: truncated name");
    }
    const auto rank = take<std::uint32_t>(in, "rank");
    if (rank == 0 || rank > kMaxRank) {
      throw FormatError("corrupt tensor file: invalid rank for " + name);
    }
    ad::Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto d = take<std::uint64_t>(in, "dimension");
      if (d == 0 || d > (1ull << 40) || n > (1ull << 40) / d) {
        throw FormatError("corrupt tensor file: invalid dimension for " + name);
      }
      n *= d;
      shape.push_back(static_cast<std::size_t>(d));
    }
    std::vector<double> data(static_cast<std::size_t>(n));
    if (!in.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(n * sizeof(double)))) {
      throw FormatError("corrupt tensor file: truncated data for " + name);
    }
    out.push_back({std::move(name), ad::Tensor(std::move(shape), std::move(data))});
  }
  return out;
}

void save_tensors(const std::filesystem::path& path, std::span<const ad::NamedTensor> tensors,
                  std::string_view magic) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensors(out, tensors, magic);
}

std::vector<ad::NamedTensor> load_tensors(const std::filesystem::path& path,
                                          std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_tensors(in, magic);
}

void assign_from(std::span<const ad::NamedTensor> stored, std::span<ad::NamedTensor> params) {
  std::map<std::string, const ad::Tensor*> by_name;
  for (const auto& s : stored) by_name[s.name] = &s.tensor;
  std::vector<std::string> expected, found;
  for (const auto& p : params) expected.push_back(p.name);
  for (const auto& s : stored) found.push_back(s.name);
  std::sort(expected.begin(), expected.end());
  std::sort(found.begin(), found.end());
  if (expected != found) {
    std::ostringstream os;
    os << "checkpoint names do not match the model.\n  expected:";
    for (const auto& e : expected) os << ' ' << e;
    os << "\n  found:";
    for (const auto& f : found) os << ' ' << f;
    throw CompatibilityError(os.str());
  }
  for (auto& p : params) {
    const ad::Tensor& src = *by_name.at(p.name);
    if (src.shape() != p.tensor.shape()) {
      throw CompatibilityError("checkpoint tensor " + p.name + " has shape " +
                               ad::shape_str(src.shape()) + ", model expects " +
                               ad::shape_str(p.tensor.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), p.tensor.mutable_data().begin());
  }
}

void load_into(const std::filesystem::path& path, std::span<ad::NamedTensor> params) {
  const auto stored = load_tensors(path);
  assign_from(stored, params);
}

}  // namespace raimkit::io
