#include "reenact/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "reenact/error.hpp"
#include "reenact/nn.hpp"

namespace reenact {

namespace {

constexpr char kMagic[8] = {'R', 'N', 'C', 'K', 'P', 'T', '\0', '\0'};

class Writer {
 public:
  template <class T>
  void pod(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  template <class T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (offset_ + n > in_.size()) fail(ErrorKind::data, "checkpoint is truncated");
    const auto* p = in_.data() + offset_;
    offset_ += n;
    return p;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  bool done() const { return offset_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t offset_ = 0;
};

std::uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    default: fail(ErrorKind::data, "checkpoint cannot store tensors of this dtype");
  }
}

torch::ScalarType dtype_from_code(std::uint8_t c) {
  switch (c) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    default: fail(ErrorKind::data, "checkpoint holds unknown dtype code " + std::to_string(c));
  }
}

std::map<std::string, torch::Tensor> by_name(const CheckpointSection& section) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& t : section.tensors) out.emplace(t.name, t.value);
  return out;
}

}  // namespace

bool Checkpoint::has_section(const std::string& tag) const {
  for (const auto& s : sections) {
    if (s.tag == tag) return true;
  }
  return false;
}

const CheckpointSection& Checkpoint::section(const std::string& tag) const {
  for (const auto& s : sections) {
    if (s.tag == tag) return s;
  }
  fail(ErrorKind::data, "checkpoint has no section '" + tag + "'");
}

std::string config_hash(const nlohmann::json& config) {
  const auto text = config.dump();  // nlohmann objects iterate in sorted key order
  return hex64(fnv1a(text.data(), text.size()));
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.pod(kCheckpointVersion);
  w.str(ckpt.kind);
  w.str(ckpt.config.dump());
  w.str(ckpt.config_hash);
  w.pod(ckpt.epoch);
  w.pod(static_cast<std::uint32_t>(ckpt.sections.size()));
  for (const auto& s : ckpt.sections) {
    w.str(s.tag);
    w.pod(static_cast<std::uint32_t>(s.tensors.size()));
    for (const auto& t : s.tensors) {
      auto c = t.value.detach().contiguous();
      w.str(t.name);
      w.pod(dtype_code(c.scalar_type()));
      w.pod(static_cast<std::uint32_t>(c.dim()));
      for (auto d : c.sizes()) w.pod(static_cast<std::int64_t>(d));
      w.bytes(c.data_ptr(), static_cast<std::size_t>(c.nbytes()));
    }
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorKind::data, "not a checkpoint file (bad magic)");
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::data, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.kind = r.str();
  try {
    ckpt.config = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  ckpt.config_hash = r.str();
  if (ckpt.config_hash != config_hash(ckpt.config)) {
    fail(ErrorKind::data, "checkpoint config hash mismatch");
  }
  ckpt.epoch = r.pod<std::uint64_t>();
  const auto n_sections = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_sections; ++i) {
    CheckpointSection s;
    s.tag = r.str();
    const auto n_tensors = r.pod<std::uint32_t>();
    for (std::uint32_t k = 0; k < n_tensors; ++k) {
      NamedTensor t;
      t.name = r.str();
      const auto dtype = dtype_from_code(r.pod<std::uint8_t>());
      const auto ndim = r.pod<std::uint32_t>();
      std::vector<std::int64_t> dims(ndim);
      for (auto& d : dims) d = r.pod<std::int64_t>();
      t.value = torch::empty(dims, torch::TensorOptions().dtype(dtype));
      std::memcpy(t.value.data_ptr(), r.take(static_cast<std::size_t>(t.value.nbytes())),
                  static_cast<std::size_t>(t.value.nbytes()));
      s.tensors.push_back(std::move(t));
    }
    ckpt.sections.push_back(std::move(s));
  }
  if (!r.done()) fail(ErrorKind::data, "checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::io, "short write to checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  Checkpoint ckpt;
  try {
    ckpt = deserialize_checkpoint(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
  if (!kind.empty() && ckpt.kind != kind) {
    fail(ErrorKind::data,
         path.string() + ": expected a '" + kind + "' checkpoint, found '" + ckpt.kind + "'");
  }
  return ckpt;
}

CheckpointSection module_section(const std::string& tag, const torch::nn::Module& module) {
  CheckpointSection s{tag, {}};
  for (const auto& p : module.named_parameters()) s.tensors.push_back({p.key(), p.value().detach().clone()});
  for (const auto& b : module.named_buffers()) s.tensors.push_back({b.key(), b.value().detach().clone()});
  return s;
}

void restore_module(const CheckpointSection& section, torch::nn::Module& module) {
  const auto values = by_name(section);
  torch::NoGradGuard guard;
  auto copy_into = [&](const std::string& name, torch::Tensor& target) {
    auto it = values.find(name);
    if (it == values.end()) {
      fail(ErrorKind::data, "section '" + section.tag + "' is missing tensor '" + name + "'");
    }
    if (it->second.sizes() != target.sizes()) {
      fail(ErrorKind::data, "section '" + section.tag + "': tensor '" + name + "' has shape " +
                                c10::str(it->second.sizes()) + ", model expects " +
                                c10::str(target.sizes()));
    }
    target.copy_(it->second);
  };
  for (auto& p : module.named_parameters()) copy_into(p.key(), p.value());
  for (auto& b : module.named_buffers()) copy_into(b.key(), b.value());
}

CheckpointSection adam_section(const std::string& tag, torch::optim::Adam& optimizer,
                               const torch::nn::Module& owner) {
  CheckpointSection s{tag, {}};
  auto& state = optimizer.state();
  for (const auto& p : owner.named_parameters()) {
    auto it = state.find(p.value().unsafeGetTensorImpl());
    if (it == state.end()) continue;
    auto& st = static_cast<torch::optim::AdamParamState&>(*it->second);
    s.tensors.push_back({p.key() + ".step", torch::tensor(st.step(), torch::kInt64)});
    s.tensors.push_back({p.key() + ".exp_avg", st.exp_avg().clone()});
    s.tensors.push_back({p.key() + ".exp_avg_sq", st.exp_avg_sq().clone()});
  }
  return s;
}

void restore_adam(const CheckpointSection& section, torch::optim::Adam& optimizer,
                  const torch::nn::Module& owner) {
  const auto values = by_name(section);
  auto& state = optimizer.state();
  for (const auto& p : owner.named_parameters()) {
    auto step = values.find(p.key() + ".step");
    if (step == values.end()) continue;
    auto avg = values.find(p.key() + ".exp_avg");
    auto avg_sq = values.find(p.key() + ".exp_avg_sq");
    if (avg == values.end() || avg_sq == values.end()) {
      fail(ErrorKind::data, "optimizer section '" + section.tag + "' is incomplete for '" +
                                p.key() + "'");
    }
    auto st = std::make_unique<torch::optim::AdamParamState>();
    st->step(step->second.item<std::int64_t>());
    st->exp_avg(avg->second.clone().to(p.value().scalar_type()));
    st->exp_avg_sq(avg_sq->second.clone().to(p.value().scalar_type()));
    state[p.value().unsafeGetTensorImpl()] = std::move(st);
  }
}

}  // namespace reenact
