#include "viclf/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace viclf {

namespace {

constexpr char kMagic[8] = {'V', 'I', 'C', 'L', 'F', '0', '1', '\0'};

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint64_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void mat(const nn::Mat& m) {
    pod(static_cast<std::int64_t>(m.rows()));
    pod(static_cast<std::int64_t>(m.cols()));
    // Row-major element order, independent of Eigen's storage order.
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) pod(m(r, c));
    }
  }
  void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> buf, std::string origin) : buf_(std::move(buf)), origin_(std::move(origin)) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + at_, sizeof(T));
    at_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(buf_.data() + at_, n);
    at_ += n;
    return s;
  }
  nn::Mat mat() {
    const auto rows = pod<std::int64_t>();
    const auto cols = pod<std::int64_t>();
    if (rows < 0 || cols < 0) fail("negative tensor shape");
    need(static_cast<std::size_t>(rows * cols) * sizeof(double));
    nn::Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = pod<double>();
    }
    return m;
  }
  bool done() const { return at_ == buf_.size(); }
  [[noreturn]] void fail(const std::string& why) const {
    throw CheckpointError(origin_ + ": " + why);
  }

 private:
  void need(std::size_t n) const {
    if (at_ + n > buf_.size()) fail("truncated checkpoint");
  }

  std::vector<char> buf_;
  std::string origin_;
  std::size_t at_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.str(to_string(ck.stage));
  w.pod(ck.config_hash);
  w.pod(static_cast<std::int32_t>(ck.codebook.patch_size));
  w.mat(ck.codebook.entries);
  w.pod(static_cast<std::uint64_t>(ck.tensors.size()));
  for (const auto& [name, m] : ck.tensors) {
    w.str(name);
    w.mat(m);
  }
  nlohmann::json meta = ck.meta;
  meta["stage"] = to_string(ck.stage);
  meta["config_hash"] = hex64(ck.config_hash);
  w.str(meta.dump());

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw CheckpointError("failed to write " + path.string());

  nlohmann::json sidecar = meta;
  sidecar["format"] = "VICLF01";
  sidecar["vocab"] = ck.codebook.size();
  sidecar["patch_size"] = ck.codebook.patch_size;
  nlohmann::json shapes = nlohmann::json::object();
  for (const auto& [name, m] : ck.tensors) shapes[name] = {m.rows(), m.cols()};
  sidecar["tensors"] = shapes;
  std::ofstream(path.string() + ".json", std::ios::binary | std::ios::trunc) << sidecar.dump(2) << "\n";
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}), path.string());
  char magic[sizeof(kMagic)];
  for (char& c : magic) c = r.pod<char>();
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) r.fail("bad magic (not a VICLF01 checkpoint)");
  Checkpoint ck;
  try {
    ck.stage = stage_from_string(r.str());
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }
  ck.config_hash = r.pod<std::uint64_t>();
  ck.codebook.patch_size = r.pod<std::int32_t>();
  ck.codebook.entries = r.mat();
  const auto n = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = r.str();
    ck.tensors.emplace_back(std::move(name), r.mat());
  }
  try {
    ck.meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::parse_error&) {
    r.fail("corrupt metadata");
  }
  if (!r.done()) r.fail("trailing bytes");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, Stage expected_stage,
                           std::uint64_t expected_hash) {
  Checkpoint ck = read_checkpoint(path);
  if (ck.stage != expected_stage) {
    throw CheckpointError(path.string() + ": stage is '" + to_string(ck.stage) + "', expected '" +
                          to_string(expected_stage) + "'");
  }
  if (ck.config_hash != expected_hash) {
    throw CheckpointError(path.string() + ": config hash " + hex64(ck.config_hash) +
                          " does not match the current configuration (" + hex64(expected_hash) + ")");
  }
  return ck;
}

void pack(const std::vector<nn::NamedConstParam>& params, const std::string& prefix,
          Checkpoint& ck) {
  for (const auto& p : params) ck.tensors.emplace_back(prefix + p.name, p.param->value);
}

void unpack(const Checkpoint& ck, const std::string& prefix, const nn::ParamList& params) {
  std::map<std::string, const nn::Mat*> by_name;
  for (const auto& [name, m] : ck.tensors) by_name[name] = &m;
  for (const auto& p : params) {
    const auto it = by_name.find(prefix + p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor " + prefix + p.name);
    const nn::Mat& m = *it->second;
    if (m.rows() != p.param->value.rows() || m.cols() != p.param->value.cols()) {
      throw CheckpointError("tensor " + prefix + p.name + " has the wrong shape");
    }
    p.param->value = m;
    p.param->zero_grad();
  }
}

Checkpoint make_checkpoint(const Backbone& bb, const Codebook& cb, std::uint64_t hash) {
  Checkpoint ck{Stage::kBackbone, hash, cb, {}, {}};
  pack(bb.params(), "", ck);
  return ck;
}

Checkpoint make_checkpoint(const PromptGenerator& pg, const Codebook& cb, std::uint64_t hash) {
  Checkpoint ck{Stage::kPromptGenerator, hash, cb, {}, {}};
  pack(pg.params(), "", ck);
  return ck;
}

Checkpoint make_checkpoint(const MultiModel& m, const Codebook& cb, std::uint64_t hash) {
  Checkpoint ck{Stage::kMulti, hash, cb, {}, {}};
  pack(m.main.params(), "main.", ck);
  pack(m.aux.params(), "aux.", ck);
  pack(m.fuse.params(), "", ck);
  ck.meta["variant"] = to_string(m.variant);
  ck.meta["guidance_seed"] = hex64(m.guidance_seed);
  return ck;
}

Backbone backbone_from(const Checkpoint& ck, const BackboneConfig& cfg) {
  if (ck.stage != Stage::kBackbone) throw CheckpointError("not a backbone checkpoint");
  Backbone bb = Backbone::create(cfg, 0);
  unpack(ck, "", bb.params());
  return bb;
}

PromptGenerator prompt_generator_from(const Checkpoint& ck, const PromptGeneratorConfig& cfg) {
  if (ck.stage != Stage::kPromptGenerator) throw CheckpointError("not a prompt generator checkpoint");
  PromptGenerator pg = PromptGenerator::create(cfg, 0);
  unpack(ck, "", pg.params());
  return pg;
}

MultiModel multi_from(const Checkpoint& ck, const Backbone& pretrained, const FusionRange& range,
                      int fuse_heads) {
  if (ck.stage != Stage::kMulti) throw CheckpointError("not a multi checkpoint");
  const AblationVariant v = variant_from_string(ck.meta.at("variant").get<std::string>());
  MultiModel m = MultiModel::create(pretrained, range, fuse_heads, v, 0);
  unpack(ck, "main.", m.main.params());
  unpack(ck, "aux.", m.aux.params());
  unpack(ck, "", m.fuse.params());
  m.guidance_seed = std::stoull(ck.meta.at("guidance_seed").get<std::string>(), nullptr, 16);
  return m;
}

}  // namespace viclf
