#include "irstyle/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "irstyle/image_io.hpp"

namespace irstyle {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

constexpr std::string_view kMagic = "IRSTCKPT";

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <class T>
  void pod(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    out_.append(p, sizeof(T));
  }
  void str(std::string_view s) {
    pod<std::uint64_t>(s.size());
    out_.append(s);
  }
  template <class R>
  void tensor(const BasicTensor<R>& t) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) pod<std::uint64_t>(d);
    out_.append(reinterpret_cast<const char*>(t.raw()), t.numel() * sizeof(R));
  }
  void adam(const AdamState& a) {
    pod<std::uint64_t>(a.step);
    pod<std::uint64_t>(a.m.size());
    for (std::size_t i = 0; i < a.m.size(); ++i) {
      tensor(a.m[i]);
      tensor(a.v[i]);
    }
  }
  void net(const ConvNet& n) {
    pod<std::uint8_t>(n.empty() ? 0 : 1);
    if (n.empty()) return;
    const ConvNetSpec& s = n.spec();
    pod<std::uint64_t>(s.channels.size());
    for (std::size_t c : s.channels) pod<std::uint64_t>(c);
    pod<std::uint64_t>(s.hidden);
    pod<std::uint64_t>(s.outputs);
    pod<std::uint64_t>(s.kernel);
    pod<double>(s.slope);
    pod<std::uint64_t>(n.params().size());
    for (const Tensor& t : n.params()) tensor(t);
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  template <class R>
  BasicTensor<R> tensor() {
    const auto rank = pod<std::uint32_t>();
    if (rank > 8) corrupt("tensor rank");
    Shape shape(rank);
    std::size_t n = 1;
    for (std::size_t& d : shape) {
      d = pod<std::uint64_t>();
      if (d > (std::size_t{1} << 32)) corrupt("tensor dimension");
      n *= d;
    }
    need(n * sizeof(R));
    std::vector<R> data(n);
    if (n > 0) std::memcpy(data.data(), in_.data() + pos_, n * sizeof(R));
    pos_ += n * sizeof(R);
    return BasicTensor<R>(std::move(shape), std::move(data));
  }
  AdamState adam() {
    AdamState a;
    a.step = pod<std::uint64_t>();
    const auto n = count();
    for (std::size_t i = 0; i < n; ++i) {
      a.m.push_back(tensor<double>());
      a.v.push_back(tensor<double>());
    }
    return a;
  }
  ConvNet net() {
    if (pod<std::uint8_t>() == 0) return ConvNet();
    ConvNetSpec s;
    s.channels.resize(count());
    for (std::size_t& c : s.channels) c = pod<std::uint64_t>();
    s.hidden = pod<std::uint64_t>();
    s.outputs = pod<std::uint64_t>();
    s.kernel = pod<std::uint64_t>();
    s.slope = pod<double>();
    std::vector<Tensor> params(count());
    for (Tensor& t : params) t = tensor<float>();
    return ConvNet::from_params(std::move(s), std::move(params));
  }
  std::size_t count() {
    const auto n = pod<std::uint64_t>();
    if (n > in_.size()) corrupt("element count");
    return static_cast<std::size_t>(n);
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) corrupt("truncated");
  }
  [[noreturn]] static void corrupt(std::string_view what) {
    fail(ErrorKind::data, "corrupt checkpoint (" + std::string(what) + ")");
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const TrainState& s) {
  Writer w;
  w.bytes().append(kMagic);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.str(to_json(s.config).dump());
  w.pod<std::uint64_t>(s.step);
  w.str(serialize(s.policy));
  w.adam(s.policy_opt);
  w.net(s.critic);
  w.adam(s.critic_opt);
  w.net(s.head);
  w.adam(s.head_opt);
  w.str(s.noise.save_state());
  w.str(s.projections.save_state());
  w.str(s.source_sampler.save_state());
  w.str(s.target_sampler.save_state());
  w.pod<std::uint64_t>(s.records.size());
  for (const StepRecord& r : s.records) {
    w.pod(r.step);
    w.pod(r.l_d);
    w.pod(r.l_task);
    w.pod(r.l_total);
    w.pod(r.tau_select);
    w.pod(r.tau_gate);
  }
  const OpCounters& c = s.counters;
  for (std::uint64_t v : {c.policy_forward, c.critic_forward, c.critic_updates, c.task_head_forward, c.task_head_updates}) {
    w.pod(v);
  }
  w.pod<std::uint64_t>(fnv1a(w.bytes()));
  return std::move(w.bytes());
}

TrainState decode_checkpoint(std::string_view bytes, const OpRegistry& registry) {
  if (bytes.size() < kMagic.size() + 4 + 8 || bytes.substr(0, kMagic.size()) != kMagic) {
    fail(ErrorKind::data, "not a checkpoint file (bad magic)");
  }
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + kMagic.size(), sizeof version);
  if (version != kCheckpointVersion) {
    fail(ErrorKind::version, "unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), sizeof stored);
  if (stored != fnv1a(body)) fail(ErrorKind::data, "corrupt checkpoint (checksum mismatch)");

  Reader r(body.substr(kMagic.size() + 4));
  TrainState s;
  try {
    s.config = config_from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, std::string("corrupt checkpoint config: ") + e.what());
  }
  s.step = r.pod<std::uint64_t>();
  s.policy = deserialize(r.str(), registry);
  s.policy_opt = r.adam();
  s.critic = r.net();
  s.critic_opt = r.adam();
  s.head = r.net();
  s.head_opt = r.adam();
  s.noise.load_state(r.str());
  s.projections.load_state(r.str());
  s.source_sampler.load_state(r.str());
  s.target_sampler.load_state(r.str());
  s.records.resize(r.count());
  for (StepRecord& rec : s.records) {
    rec.step = r.pod<std::uint64_t>();
    rec.l_d = r.pod<double>();
    rec.l_task = r.pod<double>();
    rec.l_total = r.pod<double>();
    rec.tau_select = r.pod<double>();
    rec.tau_gate = r.pod<double>();
  }
  OpCounters& c = s.counters;
  for (std::uint64_t* v : {&c.policy_forward, &c.critic_forward, &c.critic_updates, &c.task_head_forward, &c.task_head_updates}) {
    *v = r.pod<std::uint64_t>();
  }
  if (!r.done()) fail(ErrorKind::data, "corrupt checkpoint (trailing bytes)");
  if (s.records.size() != s.step || s.step > s.config.steps) fail(ErrorKind::data, "corrupt checkpoint (step count)");
  const auto params = policy_tensors(s.policy);
  if (s.policy_opt.m.size() != params.size()) fail(ErrorKind::data, "corrupt checkpoint (optimizer state)");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (s.policy_opt.m[i].shape() != params[i].shape() || s.policy_opt.v[i].shape() != params[i].shape()) {
      fail(ErrorKind::data, "corrupt checkpoint (optimizer state shape)");
    }
  }
  return s;
}

void checkpoint_save(const TrainState& state, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(state));
}

TrainState checkpoint_load(const std::filesystem::path& path, const OpRegistry& registry) {
  return decode_checkpoint(read_file(path), registry);
}

}  // namespace irstyle
