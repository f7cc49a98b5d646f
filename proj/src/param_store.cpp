#include "segfuse/param_store.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "segfuse/rng.hpp"

namespace segfuse {

namespace {

constexpr char kStnrMagic[] = "STNR1\n";
constexpr char kStoreMagic[] = "SPRM1\n";

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

double get_f64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw std::runtime_error("STNR: truncated payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::string read_line(std::istream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(std::string("unexpected end of stream reading ") + what);
  return line;
}

void expect_magic(std::istream& in, const char* magic) {
  const std::size_t n = std::strlen(magic);
  std::string got(n, '\0');
  in.read(got.data(), static_cast<std::streamsize>(n));
  if (!in || got != magic) throw std::runtime_error(std::string("bad magic, expected ") + magic);
}

}  // namespace

void write_stnr(std::ostream& out, const Tensor& t) {
  out << kStnrMagic << "dtype=f64 dims=";
  for (std::size_t i = 0; i < t.dim(); ++i) out << (i ? "," : "") << t.shape()[i];
  out << '\n';
  for (double v : t.data()) put_f64(out, v);
}

Tensor read_stnr(std::istream& in) {
  expect_magic(in, kStnrMagic);
  const std::string header = read_line(in, "STNR header");
  const std::string prefix = "dtype=f64 dims=";
  if (header.rfind(prefix, 0) != 0) throw std::runtime_error("STNR: unsupported header '" + header + "'");
  Shape shape;
  std::stringstream dims(header.substr(prefix.size()));
  std::string tok;
  while (std::getline(dims, tok, ',')) {
    std::size_t pos = 0;
    const unsigned long long e = std::stoull(tok, &pos);
    if (pos != tok.size() || e == 0) throw std::runtime_error("STNR: bad extent '" + tok + "'");
    shape.push_back(static_cast<std::size_t>(e));
  }
  if (shape.empty()) throw std::runtime_error("STNR: empty dims");
  std::vector<double> values(numel_of(shape));
  for (double& v : values) v = get_f64(in);
  return Tensor::from(std::move(shape), std::move(values));
}

void save_stnr(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_stnr(out, t);
}

Tensor load_stnr(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_stnr(in);
}

Tensor ParamStore::add(const std::string& path, Tensor t) {
  if (path.empty()) throw std::invalid_argument("parameter path must be non-empty");
  if (!entries_.emplace(path, t).second) throw std::invalid_argument("duplicate parameter path " + path);
  return t;
}

const Tensor& ParamStore::get(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::out_of_range("no parameter " + path);
  return it->second;
}

Tensor& ParamStore::get(const std::string& path) {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::out_of_range("no parameter " + path);
  return it->second;
}

std::size_t ParamStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

void ParamStore::write(std::ostream& out) const {
  out << kStoreMagic << "count=" << entries_.size() << '\n';
  for (const auto& [path, t] : entries_) {
    out << "name=" << path << '\n';
    write_stnr(out, t);
  }
}

void ParamStore::read_into(std::istream& in) {
  expect_magic(in, kStoreMagic);
  const std::string count_line = read_line(in, "store count");
  if (count_line.rfind("count=", 0) != 0) throw std::runtime_error("store: bad count line");
  const std::size_t count = std::stoull(count_line.substr(6));
  if (count != entries_.size()) {
    throw std::runtime_error("store: file has " + std::to_string(count) + " entries, model has " +
                             std::to_string(entries_.size()));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name_line = read_line(in, "store entry");
    if (name_line.rfind("name=", 0) != 0) throw std::runtime_error("store: bad entry line");
    const std::string path = name_line.substr(5);
    Tensor loaded = read_stnr(in);
    Tensor& target = get(path);
    if (loaded.shape() != target.shape()) {
      throw std::runtime_error("store: shape mismatch for " + path + ": " + shape_str(loaded.shape()) +
                               " vs " + shape_str(target.shape()));
    }
    auto dst = target.mutable_data();
    std::copy(loaded.data().begin(), loaded.data().end(), dst.begin());
  }
}

Tensor fan_in_uniform(const Shape& shape, std::size_t fan_in, std::uint64_t seed, const std::string& path) {
  SplitMix64 rng(seed ^ fnv1a64(path));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(numel_of(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(shape, std::move(v), true);
}

}  // namespace segfuse
