#include "modlink/cache.hpp"

#include <atomic>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>
#include <unistd.h>

#include "modlink/error.hpp"
#include "modlink/log.hpp"

namespace modlink {

namespace {

constexpr char kMagic[8] = {'M', 'L', 'F', 'R', 'F', '0', '0', '1'};
constexpr std::string_view kKeyVersion = "modlink-frf-v1";

EVP_MD_CTX* evp(void* p) { return static_cast<EVP_MD_CTX*>(p); }

class Writer {
 public:
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : in_(bytes) {}
  bool u64(std::uint64_t& v) { return raw(&v, sizeof v); }
  bool f64(double& v) { return raw(&v, sizeof v); }
  bool str(std::string& s) {
    std::uint64_t n = 0;
    if (!u64(n) || n > in_.size() - pos_) return false;
    s.assign(in_.data() + pos_, n);
    pos_ += n;
    return true;
  }
  bool raw(void* p, std::size_t n) {
    if (n > in_.size() - pos_) return false;
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
    return true;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
  if (!ctx_ || EVP_DigestInit_ex(evp(ctx_), EVP_sha256(), nullptr) != 1) throw Error("SHA-256 initialization failed");
}

Sha256::~Sha256() { EVP_MD_CTX_free(evp(ctx_)); }

Sha256& Sha256::update(const void* data, std::size_t size) {
  if (done_) throw Error("SHA-256 context already finalized");
  if (size > 0 && EVP_DigestUpdate(evp(ctx_), data, size) != 1) throw Error("SHA-256 update failed");
  return *this;
}

Sha256& Sha256::update(std::string_view text) { return update(text.data(), text.size()); }

Sha256& Sha256::update_u64(std::uint64_t value) { return update(&value, sizeof value); }

Sha256& Sha256::update_f64(double value) { return update(&value, sizeof value); }

Sha256& Sha256::update_string(std::string_view text) {
  update_u64(text.size());
  return update(text);
}

Sha256& Sha256::update(const SparseMatrix& x) {
  SparseMatrix c = x;
  c.prune(0.0);
  c.makeCompressed();
  update_u64(static_cast<std::uint64_t>(c.rows()));
  update_u64(static_cast<std::uint64_t>(c.cols()));
  update_u64(static_cast<std::uint64_t>(c.nonZeros()));
  for (Index k = 0; k < c.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(c, k); it; ++it) {
      update_u64(static_cast<std::uint64_t>(it.row()));
      update_u64(static_cast<std::uint64_t>(it.col()));
      update_f64(it.value());
    }
  return *this;
}

Sha256& Sha256::update(const Matrix& x) {
  update_u64(static_cast<std::uint64_t>(x.rows()));
  update_u64(static_cast<std::uint64_t>(x.cols()));
  return update(x.data(), sizeof(double) * static_cast<std::size_t>(x.size()));
}

std::string Sha256::hex_digest() {
  if (done_) throw Error("SHA-256 context already finalized");
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(evp(ctx_), md, &len) != 1) throw Error("SHA-256 finalization failed");
  done_ = true;
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", md[i]);
  return out;
}

std::string sha256_hex(std::string_view data) { return Sha256().update(data).hex_digest(); }

std::string frf_cache_key(const DescriptorStateSpace& ss, const std::vector<double>& omega) {
  Sha256 h;
  h.update_string(kKeyVersion);
  h.update(ss.E()).update(ss.A()).update(ss.B()).update(ss.C()).update(ss.D());
  h.update_u64(ss.input_labels().size());
  for (const auto& l : ss.input_labels()) h.update_string(l);
  h.update_u64(ss.output_labels().size());
  for (const auto& l : ss.output_labels()) h.update_string(l);
  h.update_u64(omega.size());
  for (double w : omega) h.update_f64(w);
  return h.hex_digest();
}

std::string serialize_frf(const FrfSweep& sweep) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u64(sweep.size());
  w.u64(static_cast<std::uint64_t>(sweep.rows()));
  w.u64(static_cast<std::uint64_t>(sweep.cols()));
  for (const auto& l : sweep.input_labels()) w.str(l);
  for (const auto& l : sweep.output_labels()) w.str(l);
  for (double f : sweep.frequencies()) w.f64(f);
  for (const auto& g : sweep.data()) w.raw(g.data(), sizeof(Complex) * static_cast<std::size_t>(g.size()));
  const std::string checksum = sha256_hex(w.bytes());
  w.raw(checksum.data(), checksum.size());
  return std::move(w.bytes());
}

std::optional<FrfSweep> deserialize_frf(std::string_view bytes) {
  constexpr std::size_t hex_len = 64;
  if (bytes.size() < sizeof kMagic + hex_len) return std::nullopt;
  const std::string_view body = bytes.substr(0, bytes.size() - hex_len);
  if (sha256_hex(body) != bytes.substr(bytes.size() - hex_len)) return std::nullopt;
  Reader r(body);
  char magic[sizeof kMagic];
  if (!r.raw(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) return std::nullopt;
  std::uint64_t nf = 0, p = 0, m = 0;
  if (!r.u64(nf) || !r.u64(p) || !r.u64(m)) return std::nullopt;
  std::vector<std::string> inputs(m), outputs(p);
  for (auto& l : inputs)
    if (!r.str(l)) return std::nullopt;
  for (auto& l : outputs)
    if (!r.str(l)) return std::nullopt;
  if (r.remaining() != nf * (sizeof(double) + p * m * sizeof(Complex))) return std::nullopt;
  std::vector<double> freqs(nf);
  for (auto& f : freqs) r.f64(f);
  std::vector<ComplexMatrix> data(nf, ComplexMatrix(static_cast<Index>(p), static_cast<Index>(m)));
  for (auto& g : data) r.raw(g.data(), sizeof(Complex) * static_cast<std::size_t>(g.size()));
  try {
    return FrfSweep(std::move(freqs), std::move(data), std::move(inputs), std::move(outputs));
  } catch (const Error&) {
    return std::nullopt;
  }
}

FrfCache::FrfCache(std::filesystem::path directory) : dir_(std::move(directory)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw ValidationError(fmt::format("cannot create cache directory '{}': {}", dir_.string(), ec.message()));
}

std::optional<FrfSweep> FrfCache::load(const std::string& key) {
  const auto path = dir_ / (key + ".frf");
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream buf;
  buf << in.rdbuf();
  auto sweep = deserialize_frf(buf.str());
  if (!sweep) log_warn("ignoring corrupt cache entry '{}'", path.string());
  return sweep;
}

void FrfCache::store(const std::string& key, const FrfSweep& sweep) {
  static std::atomic<std::uint64_t> counter{0};
  std::random_device rd;
  const auto tmp = dir_ / fmt::format(".{}.{}.{}.{:x}.tmp", key, ::getpid(), counter++, rd());
  const std::string bytes = serialize_frf(sweep);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(fmt::format("cannot write cache file '{}'", tmp.string()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, dir_ / (key + ".frf"), ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(fmt::format("cannot publish cache entry '{}'", key));
  }
}

FrfSweep FrfCache::get_or_compute(const DescriptorStateSpace& ss, const std::vector<double>& omega,
                                  const FrfOptions& options) {
  const std::string key = frf_cache_key(ss, omega);
  if (auto hit = load(key)) {
    ++stats_.hits;
    return std::move(*hit);
  }
  ++stats_.misses;
  ++stats_.evaluations;
  FrfSweep sweep = frf_eval(ss, omega, options);
  store(key, sweep);
  return sweep;
}

BlockFrf FrfCache::block(const BlockSystem& block, const std::vector<double>& omega, const FrfOptions& options) {
  BlockFrf out{block.layout, {}};
  for (const auto& s : block.subsystems) out.subsystems.push_back(get_or_compute(s, omega, options));
  return out;
}

}  // namespace modlink
