#include "gaot/runconfig.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "gaot/keyval.hpp"

namespace gaot {

namespace {

// Seed keys distinguish "left at default" from "written explicitly": only
// unset ones resolve from the run seed after all assignments landed.
struct SeedFlags {
  bool data = false;
  bool train = false;
};

std::string generator_name(Generator g) {
  switch (g) {
    case Generator::PoissonGauss: return "poisson-gauss";
    case Generator::PoissonSinesDisk: return "poisson-sines-disk";
    case Generator::Diffusion: return "diffusion";
  }
  throw std::logic_error("unreachable generator");
}

Generator parse_generator(const std::string& key, const std::string& value) {
  if (value == "poisson-gauss") return Generator::PoissonGauss;
  if (value == "poisson-sines-disk") return Generator::PoissonSinesDisk;
  if (value == "diffusion") return Generator::Diffusion;
  kv::bad_value(key, value, "'poisson-gauss', 'poisson-sines-disk' or 'diffusion'");
}

bool set_data_key(DataSection& s, SeedFlags& seeds, const std::string& key,
                  const std::string& value) {
  using namespace kv;
  if (key == "generator") s.generator = parse_generator(key, value);
  else if (key == "n_samples") s.n_samples = parse_i64_list(key, value);
  else if (key == "points") s.points = parse_i64(key, value);
  else if (key == "snapshots") s.snapshots = parse_i64(key, value);
  else if (key == "nu") s.nu = parse_f64(key, value);
  else if (key == "k_modes") s.k_modes = parse_i64(key, value);
  else if (key == "r_exp") s.r_exp = parse_f64(key, value);
  else if (key == "seed") { s.seed = parse_u64(key, value); seeds.data = true; }
  else if (key == "out") s.out = value;
  else return false;
  return true;
}

bool set_train_key(TrainSection& s, SeedFlags& seeds, const std::string& key,
                   const std::string& value) {
  using namespace kv;
  if (key == "epochs") s.epochs = parse_i64(key, value);
  else if (key == "batch") s.batch = parse_i64(key, value);
  else if (key == "seed") { s.seed = parse_u64(key, value); seeds.train = true; }
  else if (key == "checkpoint_interval") s.checkpoint_interval = parse_i64(key, value);
  else if (key == "checkpoint_dir") s.checkpoint_dir = value;
  else return false;
  return true;
}

bool set_eval_key(EvalSection& s, const std::string& key, const std::string& value) {
  using namespace kv;
  if (key == "checkpoint") s.checkpoint = value;
  else if (key == "split") {
    if (value != "train" && value != "val" && value != "test")
      bad_value(key, value, "'train', 'val' or 'test'");
    s.split = value;
  } else if (key == "mode") {
    if (value == "DR") s.mode = InferMode::Direct;
    else if (value == "AR") s.mode = InferMode::Autoregressive;
    else bad_value(key, value, "'DR' or 'AR'");
  } else if (key == "ar_dt") s.ar_dt = parse_f64(key, value);
  else return false;
  return true;
}

bool set_bench_key(BenchSection& s, const std::string& key, const std::string& value) {
  using namespace kv;
  if (key == "mode") {
    if (value == "train") s.mode = BenchMode::Train;
    else if (value == "infer") s.mode = BenchMode::Infer;
    else bad_value(key, value, "'train' or 'infer'");
  } else if (key == "sizes") s.sizes = parse_i64_list(key, value);
  else return false;
  return true;
}

void apply_assignment(RunConfig& cfg, SeedFlags& seeds, const std::string& section,
                      const std::string& key, const std::string& value,
                      const std::string& where) {
  try {
    bool known;
    if (section.empty()) {
      known = key == "seed";
      if (known) cfg.seed = kv::parse_u64(key, value);
    } else if (section == "data") {
      known = set_data_key(cfg.data, seeds, key, value);
    } else if (section == "model") {
      known = set_model_key(cfg.model, key, value);
    } else if (section == "train") {
      known = set_train_key(cfg.train, seeds, key, value);
    } else if (section == "eval") {
      known = set_eval_key(cfg.eval, key, value);
    } else if (section == "bench") {
      known = set_bench_key(cfg.bench, key, value);
    } else {
      throw std::runtime_error("unknown section '" + section + "'");
    }
    if (!known)
      throw std::runtime_error("unknown key '" +
                               (section.empty() ? key : section + "." + key) + "'");
  } catch (const std::exception& e) {
    throw std::runtime_error(where + ": " + e.what());
  }
}

void validate(const RunConfig& cfg) {
  auto fail = [](const std::string& what) { throw std::runtime_error("config: " + what); };
  const auto& n = cfg.data.n_samples;
  if (n.size() != 3) fail("data.n_samples needs exactly train,val,test counts");
  int64_t total = 0;
  for (int64_t c : n) {
    if (c < 0) fail("data.n_samples counts must be nonnegative");
    total += c;
  }
  if (total < 1) fail("data.n_samples must cover at least one sample");
  if (cfg.data.points < 1) fail("data.points must be positive");
  if (cfg.data.snapshots < 2) fail("data.snapshots must be at least 2");
  if (cfg.data.k_modes < 1) fail("data.k_modes must be positive");
  if (cfg.train.epochs < 0) fail("train.epochs cannot be negative");
  if (cfg.train.batch < 1) fail("train.batch must be positive");
  if (cfg.train.checkpoint_interval < 0) fail("train.checkpoint_interval cannot be negative");
  if (cfg.eval.ar_dt < 0.0) fail("eval.ar_dt cannot be negative");
  if (cfg.bench.sizes.empty()) fail("bench.sizes must list at least one point count");
  for (int64_t s : cfg.bench.sizes)
    if (s < 1) fail("bench.sizes entries must be positive");
  validate_model_config(cfg.model);
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  SeedFlags seeds;

  size_t pos = 0;
  int lineno = 0;
  std::string section;
  while (pos < text.size()) {
    const size_t nl = text.find('\n', pos);
    std::string line = kv::trim(text.substr(pos, nl - pos));
    pos = (nl == std::string::npos) ? text.size() : nl + 1;
    ++lineno;
    const std::string where = "config line " + std::to_string(lineno);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw std::runtime_error(where + ": unterminated section header");
      section = line.substr(1, line.size() - 2);
      if (section != "data" && section != "model" && section != "train" && section != "eval" &&
          section != "bench")
        throw std::runtime_error(where + ": unknown section '" + section + "'");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(where + ": expected key = value, got '" + line + "'");
    apply_assignment(cfg, seeds, section, kv::trim(line.substr(0, eq)),
                     kv::trim(line.substr(eq + 1)), where);
  }

  for (const std::string& ov : overrides) {
    const std::string where = "override '" + ov + "'";
    const size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(where + ": expected section.key=value");
    std::string key = kv::trim(ov.substr(0, eq));
    const std::string value = kv::trim(ov.substr(eq + 1));
    std::string ov_section;
    const size_t dot = key.find('.');
    if (dot != std::string::npos) {
      ov_section = key.substr(0, dot);
      key = key.substr(dot + 1);
    }
    apply_assignment(cfg, seeds, ov_section, key, value, where);
  }

  if (!seeds.data) cfg.data.seed = derive_seed(cfg.seed, "data");
  if (!seeds.train) cfg.train.seed = derive_seed(cfg.seed, "train");

  validate(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), overrides);
}

std::string emit_run_config(const RunConfig& cfg) {
  using namespace kv;
  std::string out;
  auto put = [&](const char* key, const std::string& value) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  };

  put("seed", fmt_u64(cfg.seed));

  out += "\n[data]\n";
  put("generator", generator_name(cfg.data.generator));
  put("n_samples", fmt_i64_list(cfg.data.n_samples));
  put("points", fmt_i64(cfg.data.points));
  put("snapshots", fmt_i64(cfg.data.snapshots));
  put("nu", fmt_f64(cfg.data.nu));
  put("k_modes", fmt_i64(cfg.data.k_modes));
  put("r_exp", fmt_f64(cfg.data.r_exp));
  put("seed", fmt_u64(cfg.data.seed));
  put("out", cfg.data.out);

  out += '\n';
  out += emit_model_config(cfg.model);

  out += "\n[train]\n";
  put("epochs", fmt_i64(cfg.train.epochs));
  put("batch", fmt_i64(cfg.train.batch));
  put("seed", fmt_u64(cfg.train.seed));
  put("checkpoint_interval", fmt_i64(cfg.train.checkpoint_interval));
  put("checkpoint_dir", cfg.train.checkpoint_dir);

  out += "\n[eval]\n";
  put("checkpoint", cfg.eval.checkpoint);
  put("split", cfg.eval.split);
  put("mode", cfg.eval.mode == InferMode::Direct ? "DR" : "AR");
  put("ar_dt", fmt_f64(cfg.eval.ar_dt));

  out += "\n[bench]\n";
  put("mode", cfg.bench.mode == BenchMode::Train ? "train" : "infer");
  put("sizes", fmt_i64_list(cfg.bench.sizes));

  return out;
}

}  // namespace gaot
