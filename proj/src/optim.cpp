#include "fgb/optim.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace fgb {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  check(!name.empty(), "ParamStore: empty parameter name");
  check(!index_.count(name), "ParamStore: duplicate parameter '" + name + "'");
  index_[name] = entries_.size();
  entries_.push_back(Entry{name, std::move(t), {}});
  return entries_.back().param;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  check(it != index_.end(), "ParamStore: unknown parameter '" + name + "'");
  return entries_[it->second].param;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  check(it != index_.end(), "ParamStore: unknown parameter '" + name + "'");
  return entries_[it->second].param;
}

bool ParamStore::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.param.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& e : entries_)
    out.add(e.name, e.param.clone(e.param.requires_grad()));
  return out;
}

void ParamStore::copy_values_from(const ParamStore& src,
                                  const std::string& name) {
  Tensor& dst = get(name);
  const Tensor& s = src.get(name);
  check(dst.shape() == s.shape(),
        "ParamStore: shape mismatch copying '" + name + "'");
  auto d = dst.values_mut();
  auto sv = s.values();
  std::copy(sv.begin(), sv.end(), d.begin());
}

void adam_step(ParamStore& params, const AdamConfig& cfg) {
  // Validate first so a bad gradient leaves every parameter untouched.
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params.at(i);
    if (!p.has_grad()) continue;
    for (double g : p.grad())
      if (!std::isfinite(g))
        throw Error("adam_step: non-finite gradient in parameter '" +
                    params.name_at(i) + "'");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.at(i);
    if (!p.has_grad()) continue;
    auto& st = params.state_at(i);
    auto vals = p.values_mut();
    auto grads = p.grad();
    if (st.m.empty()) {
      st.m.assign(vals.size(), 0.0);
      st.v.assign(vals.size(), 0.0);
    }
    st.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    for (std::size_t j = 0; j < vals.size(); ++j) {
      double g = grads[j];
      if (!cfg.decoupled) g += cfg.weight_decay * vals[j];
      st.m[j] = cfg.beta1 * st.m[j] + (1.0 - cfg.beta1) * g;
      st.v[j] = cfg.beta2 * st.v[j] + (1.0 - cfg.beta2) * g * g;
      const double mhat = st.m[j] / bc1;
      const double vhat = st.v[j] / bc2;
      double upd = mhat / (std::sqrt(vhat) + cfg.eps);
      if (cfg.decoupled) upd += cfg.weight_decay * vals[j];
      vals[j] -= cfg.lr * upd;
    }
  }
}

// ---------------------------------------------------------------------------
// BKPT checkpoint
// ---------------------------------------------------------------------------

namespace {

constexpr uint16_t kCheckpointVersion = 1;

void put_u16(std::string& buf, uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw Error("checkpoint '" + path + "': truncated reading " + what +
                  " at byte " + std::to_string(pos));
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint8_t>(buf[pos]) |
                 (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<uint8_t>(buf[pos++]);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const ParamStore& params, const std::string& path) {
  std::string buf;
  buf += "BKPT";
  put_u16(buf, kCheckpointVersion);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name_at(i);
    const Tensor& p = params.at(i);
    check(name.size() <= 0xffff, "save_checkpoint: parameter name too long");
    put_u16(buf, static_cast<uint16_t>(name.size()));
    buf += name;
    check(p.shape().size() <= 0xff, "save_checkpoint: rank too large");
    buf.push_back(static_cast<char>(p.shape().size()));
    for (auto d : p.shape()) put_u32(buf, static_cast<uint32_t>(d));
    for (double v : p.values()) put_f64(buf, v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), "save_checkpoint: cannot open '" + path + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  check(out.good(), "save_checkpoint: write failed for '" + path + "'");
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "load_checkpoint: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  Reader r{buf, 0, path};
  if (r.bytes(4, "magic") != "BKPT")
    throw Error("checkpoint '" + path + "': bad magic at byte 0");
  const uint16_t version = r.u16("version");
  if (version != kCheckpointVersion)
    throw Error("checkpoint '" + path + "': unsupported version " +
                std::to_string(version));
  ParamStore store;
  while (r.pos < buf.size()) {
    const uint16_t name_len = r.u16("name length");
    const std::string name = r.bytes(name_len, "name");
    const uint8_t rank = r.u8("rank");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (int i = 0; i < rank; ++i) {
      shape[i] = r.u32("extent");
      n *= shape[i];
    }
    std::vector<double> vals(n);
    for (std::size_t i = 0; i < n; ++i) vals[i] = r.f64("value");
    store.add(name, Tensor(std::move(shape), std::move(vals), true));
  }
  return store;
}

}  // namespace fgb
