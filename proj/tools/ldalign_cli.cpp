// ldalign: corpus synthesis and the pipeline commands.
//
// Exit status: 0 success, 1 verification or validation failure, 2 config or
// I/O error (including bad command-line usage).

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ldalign/align.hpp"
#include "ldalign/analysis.hpp"
#include "ldalign/checkpoint.hpp"
#include "ldalign/config.hpp"
#include "ldalign/corpus.hpp"
#include "ldalign/errors.hpp"
#include "ldalign/guide.hpp"
#include "ldalign/lm.hpp"
#include "ldalign/model_io.hpp"
#include "ldalign/toy_tasks.hpp"
#include "ldalign/verify.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ldalign;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string run_id;
};

// Holds <dir>/ldalign.lock for the lifetime of the object.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / "ldalign.lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      throw IoError("output directory " + dir.string() + " is locked (" + path_.string() +
                    " exists)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd, pid.data(), pid.size()) < 0) {
      ::close(fd);
      throw IoError("cannot write " + path_.string());
    }
    ::close(fd);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = load_run_config(c.config_path, c.sets);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (cfg.out_dir.empty()) cfg.out_dir = "runs";
  return cfg;
}

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  return s.str();
}

fs::path run_dir(const RunConfig& cfg, const Common& c) {
  const std::string id =
      c.run_id.empty() ? config_hash(cfg).substr(0, 12) + "-" + utc_stamp() : c.run_id;
  return fs::path(cfg.out_dir) / id;
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

// Train and heldout sets from the corpus section.
std::pair<Dataset, Dataset> load_corpus(const RunConfig& cfg) {
  Dataset train = load_jsonl(cfg.corpus.train_path);
  if (!cfg.corpus.heldout_path.empty()) return {train, load_jsonl(cfg.corpus.heldout_path)};
  return split(train, cfg.corpus.heldout_fraction, derive_seed({cfg.seed, 0x73706c6974}));
}

void start_run(const fs::path& dir, const RunConfig& cfg, const std::string& command) {
  for (const char* sub : {"checkpoints", "reports", "metrics"}) fs::create_directories(dir / sub);
  write_json(dir / "config.json", to_json(cfg));
  std::cerr << command << ": run directory " << dir.string() << "\n";
}

void emit_losses(const std::vector<double>& losses, const std::string& phase,
                 const fs::path& path) {
  std::vector<MetricRecord> recs;
  recs.reserve(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    recs.push_back({phase, 0, static_cast<int>(i), losses[i]});
  }
  emit_metrics(recs, path.string());
}

int cmd_make_corpus(const Common& c, int n_pairs, const std::string& tasks_csv,
                    const std::string& out_path) {
  RunConfig cfg = load_run_config(c.config_path, c.sets);
  if (c.seed) cfg.seed = *c.seed;
  if (n_pairs > 0) cfg.corpus.n_pairs = n_pairs;
  if (!tasks_csv.empty()) {
    cfg.corpus.tasks.clear();
    std::stringstream ss(tasks_csv);
    for (std::string t; std::getline(ss, t, ',');) {
      if (!t.empty()) cfg.corpus.tasks.push_back(t);
    }
  }
  cfg.validate(false);
  const Dataset d = make_corpus(cfg.corpus.tasks, static_cast<std::size_t>(cfg.corpus.n_pairs),
                                cfg.seed, cfg.corpus.toy);
  if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
  save_jsonl(d, out_path);
  std::cout << out_path << "\n";
  return 0;
}

int cmd_sft(const Common& c) {
  const RunConfig cfg = resolve_config(c);
  cfg.validate(true);
  const RunConfig s = cfg.with_derived_seeds();
  const auto [train, heldout] = load_corpus(cfg);
  const fs::path dir = run_dir(cfg, c);
  DirLock lock(dir);
  start_run(dir, cfg, "sft");

  const auto init = LMParams<float>::random(s.lm, derive_seed({cfg.seed, 0x696e6974}));
  std::vector<double> losses;
  const auto theta =
      train_sft(init, train, s.sft, [&](int, double loss) { losses.push_back(loss); });
  save_lm((dir / "checkpoints" / "sft").string(), theta);
  emit_losses(losses, "sft", dir / "metrics" / "sft_loss.csv");
  const json report = {{"heldout_loss_before", sft_loss(init, std::span(heldout.pairs))},
                       {"heldout_loss_after", sft_loss(theta, std::span(heldout.pairs))},
                       {"train_pairs", train.size()},
                       {"heldout_pairs", heldout.size()},
                       {"checkpoint_hash", content_hash(theta.values())}};
  write_json(dir / "reports" / "sft.json", report);
  std::cout << dir.string() << "\n";
  return 0;
}

int cmd_train_guide(const Common& c, const std::string& sft_dir) {
  const RunConfig cfg = resolve_config(c);
  cfg.validate(true);
  const RunConfig s = cfg.with_derived_seeds();
  const auto [train, heldout] = load_corpus(cfg);
  const auto theta0 = load_lm(sft_dir);
  const fs::path dir = run_dir(cfg, c);
  DirLock lock(dir);
  start_run(dir, cfg, "train-guide");

  const auto gens = generate_cohort(theta0, train, s.align.decode, s.align.seed, 0);
  save_generations(gens, (dir / "generations_iter0.jsonl").string());
  const auto init = GuideParams<float>::random(s.guide, s.guide_train.seed);
  std::vector<double> losses;
  const auto guide = train_guide(init, train, gens, s.guide_train,
                                 [&](int, double loss) { losses.push_back(loss); });
  save_guide((dir / "checkpoints" / "guide").string(), guide);
  emit_losses(losses, "guide", dir / "metrics" / "guide_loss.csv");
  const json report = {{"generations", gens.size()},
                       {"final_loss", losses.empty() ? 0.0 : losses.back()},
                       {"sft_checkpoint_hash", checkpoint_hash(sft_dir)},
                       {"checkpoint_hash", content_hash(guide.values())}};
  write_json(dir / "reports" / "train_guide.json", report);
  std::cout << dir.string() << "\n";
  return 0;
}

int cmd_align(const Common& c, const std::string& sft_dir, const std::string& guide_dir) {
  const RunConfig cfg = resolve_config(c);
  cfg.validate(true);
  const RunConfig s = cfg.with_derived_seeds();
  const auto [train, heldout] = load_corpus(cfg);
  const auto theta0 = load_lm(sft_dir);
  const auto guide = load_guide(guide_dir);
  const fs::path dir = run_dir(cfg, c);
  DirLock lock(dir);
  start_run(dir, cfg, "align");

  const LdAlignResult r =
      run_ld_align_with_guide(theta0, guide, train, &heldout, s.align, dir.string());
  save_lm((dir / "checkpoints" / "final").string(), r.theta);
  json reports = json::array();
  for (const auto& rep : r.reports) reports.push_back(to_json(rep));
  json summary = {{"iterations", r.reports.size()},
                  {"reports", reports},
                  {"final_checkpoint_hash", content_hash(r.theta.values())}};
  if (r.final_mean_distance) summary["final_mean_distance"] = *r.final_mean_distance;
  write_json(dir / "reports" / "align.json", summary);
  std::cout << dir.string() << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& ckpt, const std::string& ref_ckpt,
             const std::string& guide_dir) {
  const RunConfig cfg = resolve_config(c);
  cfg.validate(true);
  const auto [train, heldout_all] = load_corpus(cfg);
  Dataset subset = heldout_all;
  if (cfg.eval.max_pairs > 0 && subset.size() > static_cast<std::size_t>(cfg.eval.max_pairs)) {
    subset.pairs.resize(static_cast<std::size_t>(cfg.eval.max_pairs));
  }
  const auto theta = load_lm(ckpt);
  const auto ref = load_lm(ref_ckpt);
  const auto guide = load_guide(guide_dir);
  const fs::path dir = run_dir(cfg, c);
  DirLock lock(dir);
  start_run(dir, cfg, "eval");

  const std::uint64_t es = derive_seed({cfg.seed, 0x6576616c});
  DecodeConfig dec = cfg.align.decode;
  dec.seed = derive_seed({es, 0});
  const auto gens = generate_cohort(theta, subset, dec, dec.seed, 0);
  const auto distances = cohort_distances(guide, subset, gens);
  const auto edges = uniform_edges(distances, cfg.eval.histogram_bins);
  const Histogram hist = distance_histogram(distances, edges);

  const auto judge = make_judge(cfg.eval.judge, derive_seed({es, 1}));
  DecodeConfig da = cfg.align.decode, db = cfg.align.decode;
  da.seed = derive_seed({es, 2});
  db.seed = derive_seed({es, 3});
  const ConsistencyReport cons = pairwise_consistency(guide, theta, subset, *judge, da, db);

  DecodeConfig dm = cfg.align.decode;
  dm.seed = derive_seed({es, 4});
  const MarginReport margins = reward_margin_eval(theta, ref, subset, cfg.align.beta, dm);
  write_margins_csv((dir / "reports" / "margins.csv").string(), margins);
  write_distance_csv((dir / "metrics" / "eval_distances.csv").string(),
                     make_distance_records(distances, 0));

  double mean_s = 0.0;
  for (double v : distances) mean_s += v;
  mean_s /= static_cast<double>(distances.size());
  const json report = {{"pairs", subset.size()},
                       {"mean_distance", mean_s},
                       {"histogram", to_json(hist)},
                       {"consistency", to_json(cons)},
                       {"judge", judge->name()},
                       {"mean_margin", margins.mean_margin},
                       {"fraction_positive", margins.fraction_positive},
                       {"degenerate_margins", margins.degenerate},
                       {"checkpoint_hash", checkpoint_hash(ckpt)},
                       {"ref_checkpoint_hash", checkpoint_hash(ref_ckpt)}};
  write_json(dir / "reports" / "eval.json", report);
  std::cout << dir.string() << "\n";
  return 0;
}

int cmd_verify(const Common& c, bool corrupt_gradient) {
  RunConfig cfg = load_run_config(c.config_path, c.sets);
  if (c.seed) cfg.seed = *c.seed;
  VerifyOptions opt;
  opt.seed = cfg.seed;
  opt.corrupt_gradient = corrupt_gradient;
  std::optional<DirLock> lock;
  fs::path dir;
  if (!c.out.empty()) {
    cfg.out_dir = c.out;
    dir = run_dir(cfg, c);
    lock.emplace(dir);
    opt.scratch_dir = (dir / "verify_scratch").string();
  }
  const VerifyReport rep = run_verify_suite(opt);
  for (const auto& ch : rep.checks) {
    std::cout << (ch.passed ? "PASS " : "FAIL ") << ch.name << " value=" << ch.value
              << " tol=" << ch.tolerance;
    if (!ch.detail.empty()) std::cout << " (" << ch.detail << ")";
    std::cout << "\n";
  }
  if (!dir.empty()) {
    write_json(dir / "reports" / "verify.json", to_json(rep));
    fs::remove_all(dir / "verify_scratch");
  }
  return rep.all_passed() ? 0 : 1;
}

int exit_code_for(const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const LengthError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LD-Align: latent-distance-guided alignment on toy corpora"};
  app.require_subcommand(1);
  Common common;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON run config");
    sub->add_option("--set", common.sets, "Override a config key: key.path=value")
        ->take_all()
        ->allow_extra_args(false);
    sub->add_option("--out", common.out, "Output root directory");
    sub->add_option("--seed", common.seed, "Master seed");
    sub->add_option("--run-id", common.run_id,
                    "Run directory name (default: config hash prefix + UTC time)");
  };

  int n_pairs = 0;
  std::string tasks, corpus_out;
  auto* mk = app.add_subcommand("make-corpus", "Write a synthetic toy-task corpus (JSONL)");
  add_common(mk);
  mk->add_option("-n,--n-pairs", n_pairs, "Number of pairs (default: corpus.n_pairs)");
  mk->add_option("--tasks", tasks, "Comma-separated task mix (reverse,uppercase,copy)");
  mk->add_option("-o,--output", corpus_out, "Output JSONL path")->required();

  auto* sft = app.add_subcommand("sft", "Supervised fine-tuning from random init");
  add_common(sft);

  std::string sft_ckpt, guide_ckpt, ckpt, ref_ckpt;
  auto* tg = app.add_subcommand("train-guide", "Sample from the SFT model and train the guide");
  add_common(tg);
  tg->add_option("--sft", sft_ckpt, "SFT checkpoint directory")->required();

  auto* al = app.add_subcommand("align", "Run the alignment iterations");
  add_common(al);
  al->add_option("--sft", sft_ckpt, "SFT checkpoint directory (theta_0)")->required();
  al->add_option("--guide", guide_ckpt, "Guide checkpoint directory")->required();

  auto* ev = app.add_subcommand("eval", "Distance histogram, judge consistency, reward margins");
  add_common(ev);
  ev->add_option("--checkpoint", ckpt, "Policy checkpoint")->required();
  ev->add_option("--ref", ref_ckpt, "Reference checkpoint")->required();
  ev->add_option("--guide", guide_ckpt, "Guide checkpoint")->required();

  bool corrupt = false;
  auto* vf = app.add_subcommand("verify", "Invariant suite on tiny random models");
  add_common(vf);
  vf->add_flag("--corrupt-gradient", corrupt, "Fault injection: tamper with the gradient");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (mk->parsed()) return cmd_make_corpus(common, n_pairs, tasks, corpus_out);
    if (sft->parsed()) return cmd_sft(common);
    if (tg->parsed()) return cmd_train_guide(common, sft_ckpt);
    if (al->parsed()) return cmd_align(common, sft_ckpt, guide_ckpt);
    if (ev->parsed()) return cmd_eval(common, ckpt, ref_ckpt, guide_ckpt);
    if (vf->parsed()) return cmd_verify(common, corrupt);
  } catch (...) {
    return exit_code_for(std::current_exception());
  }
  return 2;
}
