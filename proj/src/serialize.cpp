#include "embridge/serialize.hpp"

#include <fstream>
#include <sstream>

namespace embridge {

namespace {

void write_mat(std::ostream& os, const std::string& name, const Mat& m) {
  os << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (long i = 0; i < m.rows(); ++i) {
    for (long j = 0; j < m.cols(); ++j) {
      if (j) os << ' ';
      os << fmt_double(m(i, j));
    }
    os << '\n';
  }
}

Mat read_mat(std::istream& is, const std::string& expect_name) {
  std::string name;
  long rows = 0, cols = 0;
  if (!(is >> name >> rows >> cols))
    throw IoError("checkpoint: truncated while reading " + expect_name);
  if (name != expect_name)
    throw IoError("checkpoint: expected block '" + expect_name + "', found '" +
                  name + "'");
  Mat m(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j)
      if (!(is >> m(i, j)))
        throw IoError("checkpoint: truncated matrix " + expect_name);
  return m;
}

void write_ints(std::ostream& os, const std::string& name,
                const std::vector<int>& v) {
  os << name << ' ' << v.size() << '\n';
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ' ';
    os << v[i];
  }
  os << '\n';
}

std::vector<int> read_ints(std::istream& is, const std::string& expect_name) {
  std::string name;
  size_t n = 0;
  if (!(is >> name >> n) || name != expect_name)
    throw IoError("file: expected block '" + expect_name + "'");
  std::vector<int> v(n);
  for (size_t i = 0; i < n; ++i)
    if (!(is >> v[i])) throw IoError("file: truncated ints " + expect_name);
  return v;
}

void expect_header(std::istream& is, const std::string& magic, int version,
                   std::string* kind_out = nullptr) {
  std::string m;
  int v = 0;
  if (!(is >> m >> v)) throw IoError("file: missing header");
  if (m != magic) throw IoError("file: bad magic '" + m + "'");
  if (v != version)
    throw IoError("file: unsupported " + magic + " version " +
                  std::to_string(v));
  if (kind_out && !(is >> *kind_out)) throw IoError("file: missing kind");
}

void write_mlp(std::ostream& os, const Mlp& m) {
  os << "layers " << m.W.size() << '\n';
  for (size_t l = 0; l < m.W.size(); ++l) {
    write_mat(os, "W" + std::to_string(l), m.W[l]);
    write_mat(os, "b" + std::to_string(l), m.b[l]);
  }
}

Mlp read_mlp(std::istream& is) {
  std::string tag;
  size_t layers = 0;
  if (!(is >> tag >> layers) || tag != "layers")
    throw IoError("checkpoint: missing mlp layer count");
  Mlp m;
  for (size_t l = 0; l < layers; ++l) {
    m.W.push_back(read_mat(is, "W" + std::to_string(l)));
    m.b.push_back(read_mat(is, "b" + std::to_string(l)));
  }
  m.dims.clear();
  if (!m.W.empty()) {
    m.dims.push_back(int(m.W[0].rows()));
    for (const Mat& w : m.W) m.dims.push_back(int(w.cols()));
  }
  return m;
}

}  // namespace

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  f << content;
  if (!f) throw IoError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ----------------------------------------------------------- encoder

void save_encoder(const Encoder& enc, const std::string& path) {
  std::ostringstream os;
  os << "EBCKPT " << kCheckpointVersion << " encoder\n";
  os << "in " << enc.in_dim << " out " << enc.out_dim << " frozen "
     << (enc.frozen ? 1 : 0) << '\n';
  write_ints(os, "hidden", enc.hidden);
  os << "layers " << enc.W.size() << '\n';
  for (size_t l = 0; l < enc.W.size(); ++l) {
    write_mat(os, "W" + std::to_string(l), enc.W[l]);
    write_mat(os, "b" + std::to_string(l), enc.b[l]);
  }
  write_text_file(path, os.str());
}

Encoder load_encoder(const std::string& path) {
  std::istringstream is(read_text_file(path));
  std::string kind;
  expect_header(is, "EBCKPT", kCheckpointVersion, &kind);
  if (kind != "encoder") throw IoError("checkpoint: not an encoder: " + kind);
  Encoder e;
  std::string tag;
  int frozen = 0;
  if (!(is >> tag >> e.in_dim) || tag != "in")
    throw IoError("encoder checkpoint: bad dims");
  if (!(is >> tag >> e.out_dim) || tag != "out")
    throw IoError("encoder checkpoint: bad dims");
  if (!(is >> tag >> frozen) || tag != "frozen")
    throw IoError("encoder checkpoint: bad frozen flag");
  e.frozen = frozen != 0;
  e.hidden = read_ints(is, "hidden");
  size_t layers = 0;
  if (!(is >> tag >> layers) || tag != "layers")
    throw IoError("encoder checkpoint: bad layer count");
  for (size_t l = 0; l < layers; ++l) {
    e.W.push_back(read_mat(is, "W" + std::to_string(l)));
    e.b.push_back(read_mat(is, "b" + std::to_string(l)));
  }
  return e;
}

// --------------------------------------------------------- predictor

void save_predictor(const ProxyPredictor& p, const std::string& path) {
  std::ostringstream os;
  os << "EBCKPT " << kCheckpointVersion << ' ' << proxy_kind_name(p.kind)
     << '\n';
  os << "dim " << p.dim << '\n';
  switch (p.kind) {
    case ProxyKind::kMlp:
    case ProxyKind::kLinear:
      write_mlp(os, p.regressor);
      break;
    case ProxyKind::kNoise:
      write_mat(os, "eta", Mat(p.noise.eta.transpose()));
      break;
    case ProxyKind::kMemory:
      os << "tau_m " << fmt_double(p.memory.tau_m) << '\n';
      write_mat(os, "same", p.memory.same);
      write_mat(os, "cross", p.memory.cross);
      break;
    case ProxyKind::kDiffusion: {
      const DiffusionPredictor& d = p.diff;
      os << "state_dim " << d.net.state_dim << " cond_dim " << d.net.cond_dim
         << " temb_dim " << d.net.temb_dim << '\n';
      os << "num_steps " << d.sched.num_steps << '\n';
      write_mat(os, "alpha_bar", Mat(d.sched.alpha_bar.transpose()));
      os << "guidance " << fmt_double(d.guidance_scale) << " predict_noise "
         << (d.predict_noise ? 1 : 0) << " cfg_dropout "
         << fmt_double(d.cfg_dropout) << " init_seed " << d.init_seed << '\n';
      write_mat(os, "Wx", d.net.Wx);
      write_mat(os, "Wc", d.net.Wc);
      write_mat(os, "Wt", d.net.Wt);
      write_mat(os, "b0", d.net.b0);
      write_mat(os, "null_token", d.net.null_token);
      write_mlp(os, d.net.tail);
      break;
    }
  }
  write_text_file(path, os.str());
}

ProxyPredictor load_predictor(const std::string& path) {
  std::istringstream is(read_text_file(path));
  std::string kind;
  expect_header(is, "EBCKPT", kCheckpointVersion, &kind);
  ProxyPredictor p;
  try {
    p.kind = proxy_kind_from_name(kind);
  } catch (const InvalidSpec&) {
    throw IoError("predictor checkpoint: unexpected kind '" + kind + "'");
  }
  std::string tag;
  if (!(is >> tag >> p.dim) || tag != "dim")
    throw IoError("predictor checkpoint: bad dim");
  switch (p.kind) {
    case ProxyKind::kMlp:
    case ProxyKind::kLinear:
      p.regressor = read_mlp(is);
      break;
    case ProxyKind::kNoise: {
      Mat eta = read_mat(is, "eta");
      p.noise.eta = eta.row(0).transpose();
      break;
    }
    case ProxyKind::kMemory:
      if (!(is >> tag >> p.memory.tau_m) || tag != "tau_m")
        throw IoError("predictor checkpoint: bad tau_m");
      p.memory.same = read_mat(is, "same");
      p.memory.cross = read_mat(is, "cross");
      break;
    case ProxyKind::kDiffusion: {
      DiffusionPredictor& d = p.diff;
      int pn = 0;
      if (!(is >> tag >> d.net.state_dim) || tag != "state_dim")
        throw IoError("predictor checkpoint: bad state_dim");
      if (!(is >> tag >> d.net.cond_dim) || tag != "cond_dim")
        throw IoError("predictor checkpoint: bad cond_dim");
      if (!(is >> tag >> d.net.temb_dim) || tag != "temb_dim")
        throw IoError("predictor checkpoint: bad temb_dim");
      if (!(is >> tag >> d.sched.num_steps) || tag != "num_steps")
        throw IoError("predictor checkpoint: bad num_steps");
      Mat ab = read_mat(is, "alpha_bar");
      d.sched.alpha_bar = ab.row(0).transpose();
      d.sched.validate();
      if (!(is >> tag >> d.guidance_scale) || tag != "guidance")
        throw IoError("predictor checkpoint: bad guidance");
      if (!(is >> tag >> pn) || tag != "predict_noise")
        throw IoError("predictor checkpoint: bad predict_noise");
      d.predict_noise = pn != 0;
      if (!(is >> tag >> d.cfg_dropout) || tag != "cfg_dropout")
        throw IoError("predictor checkpoint: bad cfg_dropout");
      if (!(is >> tag >> d.init_seed) || tag != "init_seed")
        throw IoError("predictor checkpoint: bad init_seed");
      d.net.Wx = read_mat(is, "Wx");
      d.net.Wc = read_mat(is, "Wc");
      d.net.Wt = read_mat(is, "Wt");
      d.net.b0 = read_mat(is, "b0");
      d.net.null_token = read_mat(is, "null_token");
      d.net.tail = read_mlp(is);
      break;
    }
  }
  return p;
}

// ------------------------------------------------------------- world

namespace {

void write_split(std::ostream& os, const std::string& name, const Split& s) {
  os << "split " << name << ' ' << s.size() << '\n';
  write_ints(os, "ids", s.ids);
  write_ints(os, "labels", s.labels);
  write_mat(os, "anchors", s.anchors);
  write_mat(os, "obs_a", s.obs_a);
  write_mat(os, "obs_b", s.obs_b);
}

Split read_split(std::istream& is, const std::string& name) {
  std::string tag, got;
  long n = 0;
  if (!(is >> tag >> got >> n) || tag != "split" || got != name)
    throw IoError("world file: expected split " + name);
  Split s;
  s.ids = read_ints(is, "ids");
  s.labels = read_ints(is, "labels");
  s.anchors = read_mat(is, "anchors");
  s.obs_a = read_mat(is, "obs_a");
  s.obs_b = read_mat(is, "obs_b");
  if (s.size() != n) throw IoError("world file: split size mismatch");
  return s;
}

void write_strings(std::ostream& os, const std::string& name,
                   const std::vector<std::string>& v) {
  os << name << ' ' << v.size();
  for (const auto& x : v) os << ' ' << x;
  os << '\n';
}

std::vector<std::string> read_strings(std::istream& is,
                                      const std::string& expect) {
  std::string name;
  size_t n = 0;
  if (!(is >> name >> n) || name != expect)
    throw IoError("world file: expected " + expect);
  std::vector<std::string> v(n);
  for (auto& x : v)
    if (!(is >> x)) throw IoError("world file: truncated " + expect);
  return v;
}

}  // namespace

std::string world_to_string(const World& w) {
  std::ostringstream os;
  const WorldSpec& s = w.spec;
  os << "EBWORLD " << kWorldVersion << '\n';
  os << "num_classes " << s.num_classes << " latent_dim " << s.latent_dim
     << " embed_dim " << s.embed_dim << " obs_dim_a " << s.obs_dim_a
     << " obs_dim_b " << s.obs_dim_b << " anchor_rank " << s.anchor_rank
     << '\n';
  os << "noise_std_a " << fmt_double(s.noise_std_a) << " noise_std_b "
     << fmt_double(s.noise_std_b) << " latent_jitter "
     << fmt_double(s.latent_jitter) << '\n';
  os << "train_samples " << s.train_samples << " eval_samples "
     << s.eval_samples << " seed " << s.seed << '\n';
  write_strings(os, "train_pairs", s.train_pairs);
  write_strings(os, "eval_pairs", s.eval_pairs);
  os << "stats " << fmt_double(w.intra_class_cos) << ' '
     << fmt_double(w.inter_class_cos) << '\n';
  write_mat(os, "class_means", w.class_means);
  write_mat(os, "anchor_map", w.anchor_map);
  write_mat(os, "map_a", w.map_a);
  write_mat(os, "map_b", w.map_b);
  write_mat(os, "prototypes", w.class_prototypes);
  write_split(os, "train_ca", w.train_ca);
  write_split(os, "train_cb", w.train_cb);
  write_split(os, "eval", w.eval_set);
  os << "end\n";
  return os.str();
}

void save_world(const World& w, const std::string& path) {
  write_text_file(path, world_to_string(w));
}

World load_world(const std::string& path) {
  std::istringstream is(read_text_file(path));
  expect_header(is, "EBWORLD", kWorldVersion);
  World w;
  WorldSpec& s = w.spec;
  std::string tag;
  auto want = [&](const char* t, auto& v) {
    if (!(is >> tag >> v) || tag != t)
      throw IoError(std::string("world file: expected ") + t);
  };
  want("num_classes", s.num_classes);
  want("latent_dim", s.latent_dim);
  want("embed_dim", s.embed_dim);
  want("obs_dim_a", s.obs_dim_a);
  want("obs_dim_b", s.obs_dim_b);
  want("anchor_rank", s.anchor_rank);
  want("noise_std_a", s.noise_std_a);
  want("noise_std_b", s.noise_std_b);
  want("latent_jitter", s.latent_jitter);
  want("train_samples", s.train_samples);
  want("eval_samples", s.eval_samples);
  want("seed", s.seed);
  s.train_pairs = read_strings(is, "train_pairs");
  s.eval_pairs = read_strings(is, "eval_pairs");
  if (!(is >> tag >> w.intra_class_cos >> w.inter_class_cos) || tag != "stats")
    throw IoError("world file: expected stats");
  w.class_means = read_mat(is, "class_means");
  w.anchor_map = read_mat(is, "anchor_map");
  w.map_a = read_mat(is, "map_a");
  w.map_b = read_mat(is, "map_b");
  w.class_prototypes = read_mat(is, "prototypes");
  w.train_ca = read_split(is, "train_ca");
  w.train_cb = read_split(is, "train_cb");
  w.eval_set = read_split(is, "eval");
  s.validate();
  return w;
}

// -------------------------------------------------------------- hash

namespace {
std::string fnv1a_hex(const std::string& bytes) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return buf;
}
}  // namespace

std::string world_hash(const World& w) { return fnv1a_hex(world_to_string(w)); }

std::string file_sha_like_hash(const std::string& path) {
  return fnv1a_hex(read_text_file(path));
}

}  // namespace embridge
