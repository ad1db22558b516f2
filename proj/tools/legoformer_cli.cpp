// legoformer: dataset generation, training, evaluation, reconstruction,
// CP decomposition, and attention export for the voxel factor model.
//
// Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical abort.

#include <CLI11.hpp>
#include <omp.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lego/metrics.hpp"
#include "lego/trainer.hpp"

using namespace lego;
namespace fs = std::filesystem;

namespace {

uint32_t derive_cli_seed(uint32_t seed, uint32_t salt) {
  uint64_t h = (static_cast<uint64_t>(seed) << 32) | salt;
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  h *= 0xc4ceb9fe1a85ec53ULL;
  h ^= h >> 33;
  return static_cast<uint32_t>(h);
}

struct Globals {
  std::string config_path;
  std::string out;
  uint32_t seed = 0;
  bool deterministic = false;
  int threads = 0;
};

// Flat key=value config file; '#' starts a comment, blank lines ignored.
std::map<std::string, std::string> load_config_file(const std::string& path) {
  std::map<std::string, std::string> kv;
  if (path.empty()) return kv;
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    size_t b = line.find_last_not_of(" \t\r");
    line = line.substr(a, b - a + 1);
    const size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
    auto trim = [](std::string s) {
      const size_t x = s.find_first_not_of(" \t");
      const size_t y = s.find_last_not_of(" \t");
      return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

// Merges flag > config-file > default and records the effective values.
struct Settings {
  CLI::App* cmd = nullptr;
  std::map<std::string, std::string> file;
  std::vector<std::pair<std::string, std::string>> effective;

  template <typename T>
  T pick(const std::string& flag, const T& flag_value, const std::string& key, T def) {
    T v = def;
    if (auto it = file.find(key); it != file.end()) {
      std::istringstream ss(it->second);
      if (!(ss >> v)) throw std::invalid_argument("bad value for " + key + ": " + it->second);
    }
    if (!flag.empty() && cmd->count(flag) > 0) v = flag_value;
    std::ostringstream out;
    out << v;
    effective.emplace_back(key, out.str());
    return v;
  }

  std::string pick_str(const std::string& flag, const std::string& flag_value,
                       const std::string& key, std::string def) {
    std::string v = std::move(def);
    if (auto it = file.find(key); it != file.end()) v = it->second;
    if (!flag.empty() && cmd->count(flag) > 0) v = flag_value;
    effective.emplace_back(key, v);
    return v;
  }

  bool pick_flag(const std::string& flag, const std::string& key, bool def = false) {
    bool v = def;
    if (auto it = file.find(key); it != file.end())
      v = it->second == "1" || it->second == "true" || it->second == "yes";
    if (!flag.empty() && cmd->count(flag) > 0) v = true;
    effective.emplace_back(key, v ? "true" : "false");
    return v;
  }
};

// Prints the effective configuration and mirrors it into the output
// directory before any other side effect.
void echo_config(const Globals& g, const Settings& s) {
  std::ostringstream body;
  body << "seed=" << g.seed << "\n";
  body << "deterministic=" << (g.deterministic ? "true" : "false") << "\n";
  if (!g.out.empty()) body << "out=" << g.out << "\n";
  for (const auto& [k, v] : s.effective) body << k << "=" << v << "\n";
  std::cout << "# effective configuration\n" << body.str() << "# end configuration\n";
  if (!g.out.empty()) {
    fs::create_directories(g.out);
    std::ofstream f(fs::path(g.out) / "effective-config.txt");
    if (!f) throw std::runtime_error("cannot write effective config under " + g.out);
    f << body.str();
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

DatasetManifest load_dataset(const std::string& data) {
  fs::path p(data);
  if (fs::is_directory(p)) p /= "manifest.json";
  return load_manifest(p.string());
}

std::vector<Tensor> load_view_images(const std::vector<std::string>& paths) {
  std::vector<Tensor> views;
  for (const auto& path : paths) views.push_back(view_tensor(load_pgm(path)));
  return views;
}

Model load_model(const std::string& checkpoint) {
  auto [cfg, tensors] = load_lgfc(checkpoint);
  return Model(cfg, std::move(tensors));
}

struct TrainFlags {
  std::string data, variant = "m", scheme = "factors", optimizer = "adagrad";
  int queries = 0, steps = 0, batch = 0, warmup = 0, train_views = 0, max_views = 0;
  int d_model = 0, ff_dim = 0, layers = 0, heads = 0, conv_units = 0;
  int patch_side = 0, output_patch_side = 0, checkpoint_interval = 0, image = 0;
  float lr = 0.f;
  bool share = false;
};

int cmd_generate_data(const Globals& g, Settings& s, int objects, int grid, int image, int views,
                      float elevation, float split_fraction, const std::string& archetypes,
                      const std::string& mode) {
  if (g.out.empty()) throw std::invalid_argument("generate-data needs --out");
  const int n_objects = s.pick("--objects", objects, "data.objects", 20);
  DatasetConfig cfg;
  cfg.grid_side = s.pick("--grid", grid, "data.grid_side", 16);
  cfg.image_side = s.pick("--image", image, "data.image_side", 32);
  const int n_views = s.pick("--views", views, "data.views", 8);
  const float el = s.pick("--elevation", elevation, "data.elevation_deg", 20.f);
  cfg.split_fraction = s.pick("--split-fraction", split_fraction, "data.split_fraction", 0.8f);
  const std::string arch_list =
      s.pick_str("--archetypes", archetypes, "data.archetypes",
                 "slab,lshape,table,chair,random-union");
  const std::string mode_str = s.pick_str("--mode", mode, "data.mode", "silhouette");
  echo_config(g, s);

  if (n_objects < 1) throw std::invalid_argument("need at least one object");
  if (n_views < 1) throw std::invalid_argument("need at least one view");
  if (mode_str == "silhouette")
    cfg.mode = RenderMode::Silhouette;
  else if (mode_str == "depth")
    cfg.mode = RenderMode::Depth;
  else
    throw std::invalid_argument("render mode must be silhouette or depth, got " + mode_str);

  const std::vector<std::string> archs = split_list(arch_list);
  if (archs.empty()) throw std::invalid_argument("archetype list is empty");
  std::map<std::string, int> counts;
  for (int i = 0; i < n_objects; ++i) ++counts[archs[i % archs.size()]];
  for (const auto& a : archs)
    if (counts.count(a)) cfg.counts.emplace_back(a, counts[a]);
  for (int j = 0; j < n_views; ++j) cfg.view_angles.emplace_back(360.f * j / n_views, el);
  cfg.seed = g.seed;
  cfg.out_dir = g.out;

  DatasetManifest m = build_dataset(cfg);
  int train = 0, test = 0;
  for (const auto& obj : m.objects) (obj.split == "train" ? train : test)++;
  std::cout << "manifest=" << (fs::path(g.out) / "manifest.json").string() << "\n"
            << "objects=" << m.objects.size() << " train=" << train << " test=" << test << "\n";
  return 0;
}

int cmd_train(const Globals& g, Settings& s, const TrainFlags& f) {
  if (g.out.empty()) throw std::invalid_argument("train needs --out");
  const std::string data = s.pick_str("--data", f.data, "data.path", f.data);
  if (data.empty()) throw std::invalid_argument("train needs --data");

  ModelConfig mc;
  const std::string variant = s.pick_str("--variant", f.variant, "model.variant", "m");
  const std::string scheme = s.pick_str("--scheme", f.scheme, "model.scheme", "factors");
  mc.d_model = s.pick("--d-model", f.d_model, "model.d_model", 64);
  mc.ff_dim = s.pick("--ff-dim", f.ff_dim, "model.ff_dim", 128);
  mc.n_layers = s.pick("--layers", f.layers, "model.n_layers", 2);
  mc.n_heads = s.pick("--heads", f.heads, "model.n_heads", 4);
  mc.n_queries = s.pick("--queries", f.queries, "model.n_queries", 8);
  mc.conv_units = s.pick("--conv-units", f.conv_units, "model.conv_units", 3);
  mc.patch_side = s.pick("--patch-side", f.patch_side, "model.patch_side", 4);
  mc.output_patch_side =
      s.pick("--output-patch-side", f.output_patch_side, "model.output_patch_side", 4);
  mc.share_layer_weights = s.pick_flag("--share", "model.share_layer_weights");

  TrainConfig tc;
  tc.batch_size = s.pick("--batch", f.batch, "train.batch_size", 8);
  tc.total_steps = s.pick("--steps", f.steps, "train.total_steps", 2000);
  tc.base_lr = s.pick("--lr", f.lr, "train.base_lr", 0.01f);
  tc.warmup_steps = s.pick("--warmup", f.warmup, "train.warmup_steps", 200);
  tc.optimizer = s.pick_str("--optimizer", f.optimizer, "train.optimizer", "adagrad");
  tc.fixed_views = s.pick("--train-views", f.train_views, "train.fixed_views", 4);
  tc.max_views = s.pick("--max-views", f.max_views, "train.max_views", 8);
  tc.checkpoint_interval =
      s.pick("--checkpoint-interval", f.checkpoint_interval, "train.checkpoint_interval", 500);
  const int image_flag = s.pick("--image", f.image, "model.image_side", 0);
  echo_config(g, s);

  if (variant == "m")
    mc.variant = Variant::MultiView;
  else if (variant == "s")
    mc.variant = Variant::SingleView;
  else
    throw std::invalid_argument("variant must be m or s, got " + variant);
  mc.scheme = scheme_from_string(scheme);
  if (mc.variant == Variant::SingleView && tc.fixed_views > 1)
    throw std::invalid_argument("the single-view variant trains with exactly one view");

  DatasetManifest m = load_dataset(data);
  mc.grid_side = m.grid_side;
  if (image_flag > 0) {
    mc.image_side = image_flag;
  } else {
    if (m.objects.empty() || m.objects[0].views.empty())
      throw std::invalid_argument("dataset has no views");
    RenderedView v = load_pgm((fs::path(m.base_dir) / m.objects[0].views[0].path).string());
    mc.image_side = v.width;
  }
  mc.validate();

  tc.seed = g.seed;
  tc.out_dir = g.out;
  Model model(mc, derive_cli_seed(g.seed, 0xA11CEu));
  TrainResult res = train(model, m, tc);
  std::cout << "checkpoint=" << res.final_checkpoint << "\n";
  if (!res.log.empty()) std::cout << "final_loss=" << res.log.back().loss << "\n";
  return 0;
}

int cmd_eval(const Globals& g, Settings& s, const std::string& checkpoint, const std::string& data,
             const std::string& views, float threshold, float fdist, const std::string& split) {
  const std::string ckpt = s.pick_str("--checkpoint", checkpoint, "eval.checkpoint", checkpoint);
  const std::string data_path = s.pick_str("--data", data, "data.path", data);
  const std::string view_list = s.pick_str("--views", views, "eval.view_counts", "1,2,4,8");
  EvalConfig ec;
  ec.threshold = s.pick("--threshold", threshold, "eval.threshold", 0.3f);
  ec.fscore_distance = s.pick("--fscore-distance", fdist, "eval.fscore_distance", 0.01f);
  const std::string split_name = s.pick_str("--split", split, "eval.split", "test");
  echo_config(g, s);

  if (ckpt.empty()) throw std::invalid_argument("eval needs --checkpoint");
  if (data_path.empty()) throw std::invalid_argument("eval needs --data");
  ec.view_counts.clear();
  for (const auto& item : split_list(view_list)) ec.view_counts.push_back(std::stoi(item));

  Model model = load_model(ckpt);
  DatasetManifest m = load_dataset(data_path);
  SweepReport report = evaluate_sweep(model, m, ec, ckpt, split_name);
  for (const auto& e : report.per_view_count)
    std::cout << "views=" << e.views << " mean_iou=" << e.mean_iou
              << " mean_fscore=" << e.mean_fscore << "\n";
  if (!g.out.empty()) {
    const std::string path = (fs::path(g.out) / "report.json").string();
    save_report(path, report);
    std::cout << "report=" << path << "\n";
  }
  return 0;
}

int cmd_reconstruct(const Globals& g, Settings& s, const std::string& checkpoint,
                    const std::vector<std::string>& images, float tau_flag, bool parts,
                    bool attention) {
  if (g.out.empty()) throw std::invalid_argument("reconstruct needs --out");
  const std::string ckpt =
      s.pick_str("--checkpoint", checkpoint, "reconstruct.checkpoint", checkpoint);
  const float tau = s.pick("--threshold", tau_flag, "eval.threshold", 0.3f);
  s.effective.emplace_back("reconstruct.parts", parts ? "true" : "false");
  s.effective.emplace_back("reconstruct.attention", attention ? "true" : "false");
  echo_config(g, s);

  if (ckpt.empty()) throw std::invalid_argument("reconstruct needs --checkpoint");
  if (images.empty()) throw std::invalid_argument("reconstruct needs at least one --image");

  Model model = load_model(ckpt);
  std::vector<Tensor> views = load_view_images(images);
  Tape tape;
  ForwardOptions opts;
  opts.capture = attention;
  ForwardResult fr = model.forward(tape, views, opts);

  const std::string main_path = (fs::path(g.out) / "reconstruction.voxg").string();
  save_voxg(main_path, threshold(fr.grid, tau), true);
  std::cout << "output=" << main_path << "\n";

  if (parts) {
    PartAnalysis pa = part_analysis(model, views);
    for (size_t q = 0; q < pa.parts.size(); ++q) {
      const std::string part_path =
          (fs::path(g.out) / ("part-" + std::to_string(q) + ".voxg")).string();
      save_voxg(part_path, pa.parts[q], false);  // unclipped rank-1 term
      std::cout << "part=" << part_path << "\n";
    }
  }
  if (attention) {
    const std::string att_path = (fs::path(g.out) / "attention.json").string();
    export_attention(att_path, fr.attention);
    std::cout << "attention=" << att_path << "\n";
  }
  return 0;
}

int cmd_decompose(const Globals& g, Settings& s, const std::string& input, int k, float tau,
                  int iterations, int restarts, float lr) {
  if (g.out.empty()) throw std::invalid_argument("decompose needs --out");
  const std::string in_path = s.pick_str("--input", input, "decompose.input", input);
  const int factors = s.pick("--factors", k, "decompose.factors", 1);
  const float threshold_tau = s.pick("--threshold", tau, "eval.threshold", 0.3f);
  CpFitOptions opts;
  opts.iterations = s.pick("--iterations", iterations, "decompose.iterations", 2000);
  opts.restarts = s.pick("--restarts", restarts, "decompose.restarts", 4);
  opts.learning_rate = s.pick("--lr", lr, "decompose.learning_rate", 25.f);
  echo_config(g, s);

  if (in_path.empty()) throw std::invalid_argument("decompose needs --input");
  if (factors < 1) throw std::invalid_argument("factor count must be >= 1");
  OccupancyGrid target = load_voxg(in_path);
  FactorSet fit = cp_fit_oracle(target, factors, g.seed, opts);
  OccupancyGrid recon = threshold(compose_factors(fit), threshold_tau);

  nlohmann::json doc = {{"side", fit.side}, {"z", fit.z}, {"y", fit.y}, {"x", fit.x}};
  const std::string factors_path = (fs::path(g.out) / "factors.json").string();
  std::ofstream jf(factors_path, std::ios::binary);
  if (!jf) throw std::runtime_error("cannot write " + factors_path);
  jf << doc.dump(2) << "\n";
  const std::string recon_path = (fs::path(g.out) / "decomposition.voxg").string();
  save_voxg(recon_path, recon, true);

  std::cout << "factors=" << factors_path << "\n"
            << "reconstruction=" << recon_path << "\n"
            << "achieved_iou=" << voxel_iou(recon, target) << "\n";
  return 0;
}

int cmd_dump_attention(const Globals& g, Settings& s, const std::string& checkpoint,
                       const std::vector<std::string>& images) {
  if (g.out.empty()) throw std::invalid_argument("dump-attention needs --out");
  const std::string ckpt =
      s.pick_str("--checkpoint", checkpoint, "reconstruct.checkpoint", checkpoint);
  echo_config(g, s);
  if (ckpt.empty()) throw std::invalid_argument("dump-attention needs --checkpoint");
  if (images.empty()) throw std::invalid_argument("dump-attention needs at least one --image");

  Model model = load_model(ckpt);
  Tape tape;
  ForwardOptions opts;
  opts.capture = true;
  ForwardResult fr = model.forward(tape, load_view_images(images), opts);
  const std::string path = (fs::path(g.out) / "attention.json").string();
  export_attention(path, fr.attention);
  std::cout << "attention=" << path << "\n"
            << "records=" << fr.attention.size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"legoformer: multi-view voxel reconstruction via rank-1 factors"};
  app.require_subcommand(1);

  Globals g;
  app.add_option("--config", g.config_path, "key=value config file");
  app.add_option("--seed", g.seed, "root random seed");
  app.add_option("--out", g.out, "output directory");
  app.add_flag("--deterministic", g.deterministic, "single-threaded, bit-reproducible runs");
  app.add_option("--threads", g.threads, "OpenMP thread count (0 = library default)");

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "build a synthetic dataset");
  int objects = 20, grid = 16, image = 32, views = 8;
  float elevation = 20.f, split_fraction = 0.8f;
  std::string archetypes, mode;
  gen->add_option("--objects", objects, "total object count");
  gen->add_option("--grid", grid, "voxel grid side");
  gen->add_option("--image", image, "rendered image side");
  gen->add_option("--views", views, "views per object (evenly spaced azimuths)");
  gen->add_option("--elevation", elevation, "camera elevation in degrees");
  gen->add_option("--split-fraction", split_fraction, "train fraction");
  gen->add_option("--archetypes", archetypes, "comma-separated archetype list");
  gen->add_option("--mode", mode, "silhouette | depth");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  TrainFlags tf;
  tr->add_option("--data", tf.data, "dataset directory or manifest path");
  tr->add_option("--variant", tf.variant, "m | s");
  tr->add_option("--scheme", tf.scheme, "factors | naive | naive-nar | naive-full");
  tr->add_option("--queries", tf.queries, "decoder query count");
  tr->add_option("--steps", tf.steps, "total training steps");
  tr->add_option("--batch", tf.batch, "batch size");
  tr->add_option("--lr", tf.lr, "base learning rate");
  tr->add_option("--warmup", tf.warmup, "linear warmup steps");
  tr->add_option("--optimizer", tf.optimizer, "adagrad | sgd");
  tr->add_option("--train-views", tf.train_views, "fixed views per sample (0 = dynamic)");
  tr->add_option("--max-views", tf.max_views, "dynamic view policy upper bound");
  tr->add_option("--d-model", tf.d_model, "transformer width");
  tr->add_option("--ff-dim", tf.ff_dim, "feed-forward width");
  tr->add_option("--layers", tf.layers, "encoder/decoder layer count");
  tr->add_option("--heads", tf.heads, "attention head count");
  tr->add_option("--conv-units", tf.conv_units, "backbone conv unit count");
  tr->add_option("--patch-side", tf.patch_side, "single-view token patch side");
  tr->add_option("--output-patch-side", tf.output_patch_side, "naive-scheme 3D patch side");
  tr->add_option("--checkpoint-interval", tf.checkpoint_interval, "steps between checkpoints");
  tr->add_option("--image", tf.image, "input image side (0 = from dataset)");
  tr->add_flag("--share", tf.share, "share weights across transformer layers");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint over view counts");
  std::string ev_ckpt, ev_data, ev_views, ev_split;
  float ev_tau = 0.3f, ev_fdist = 0.01f;
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint (.lgfc)");
  ev->add_option("--data", ev_data, "dataset directory or manifest path");
  ev->add_option("--views", ev_views, "comma-separated view counts");
  ev->add_option("--threshold", ev_tau, "occupancy threshold");
  ev->add_option("--fscore-distance", ev_fdist, "f-score distance (fraction of side)");
  ev->add_option("--split", ev_split, "dataset split to evaluate");

  // reconstruct
  auto* rec = app.add_subcommand("reconstruct", "reconstruct a voxel grid from images");
  std::string rec_ckpt;
  std::vector<std::string> rec_images;
  float rec_tau = 0.3f;
  bool rec_parts = false, rec_att = false;
  rec->add_option("--checkpoint", rec_ckpt, "model checkpoint (.lgfc)");
  rec->add_option("--image", rec_images, "input view image(s), PGM");
  rec->add_option("--threshold", rec_tau, "occupancy threshold");
  rec->add_flag("--parts", rec_parts, "write per-query rank-1 grids");
  rec->add_flag("--attention", rec_att, "write the attention export");

  // decompose
  auto* dec = app.add_subcommand("decompose", "fit rank-1 factors to a voxel file");
  std::string dec_input;
  int dec_k = 1, dec_iters = 2000, dec_restarts = 4;
  float dec_tau = 0.3f, dec_lr = 25.f;
  dec->add_option("--input", dec_input, "binary voxel file (.voxg)");
  dec->add_option("-k,--factors", dec_k, "factor count");
  dec->add_option("--threshold", dec_tau, "occupancy threshold for the reported IoU");
  dec->add_option("--iterations", dec_iters, "fit iterations");
  dec->add_option("--restarts", dec_restarts, "random restarts");
  dec->add_option("--lr", dec_lr, "fit learning rate");

  // dump-attention
  auto* da = app.add_subcommand("dump-attention", "export attention scores for a forward pass");
  std::string da_ckpt;
  std::vector<std::string> da_images;
  da->add_option("--checkpoint", da_ckpt, "model checkpoint (.lgfc)");
  da->add_option("--image", da_images, "input view image(s), PGM");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (g.deterministic)
      omp_set_num_threads(1);
    else if (g.threads > 0)
      omp_set_num_threads(g.threads);

    Settings s;
    s.file = load_config_file(g.config_path);

    if (gen->parsed()) {
      s.cmd = gen;
      return cmd_generate_data(g, s, objects, grid, image, views, elevation, split_fraction,
                               archetypes, mode);
    }
    if (tr->parsed()) {
      s.cmd = tr;
      return cmd_train(g, s, tf);
    }
    if (ev->parsed()) {
      s.cmd = ev;
      return cmd_eval(g, s, ev_ckpt, ev_data, ev_views, ev_tau, ev_fdist,
                      ev_split.empty() ? "test" : ev_split);
    }
    if (rec->parsed()) {
      s.cmd = rec;
      return cmd_reconstruct(g, s, rec_ckpt, rec_images, rec_tau, rec_parts, rec_att);
    }
    if (dec->parsed()) {
      s.cmd = dec;
      return cmd_decompose(g, s, dec_input, dec_k, dec_tau, dec_iters, dec_restarts, dec_lr);
    }
    if (da->parsed()) {
      s.cmd = da;
      return cmd_dump_attention(g, s, da_ckpt, da_images);
    }
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
