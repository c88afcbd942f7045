// Acceptance checks. Usage: acceptance [criterion]; with no argument every
// criterion runs. Prints one "criterion N: PASS|FAIL ..." line per criterion
// and exits non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include "blobs.hpp"
#include "ccd/discovery.hpp"
#include "ccd/evaluation.hpp"
#include "ccd/pipeline.hpp"
#include "ccd/pools.hpp"
#include "ccd/prototypes.hpp"
#include "ccd/report.hpp"
#include "ccd/stream.hpp"

using namespace ccd;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances.
constexpr double kGradRelErr = 1e-4;
constexpr int kGradInstances = 20;
constexpr double kGradSeconds = 10.0;
constexpr double kOrthoCos = 1e-3;
constexpr double kOrthoNorm = 1e-6;
constexpr int kApSeeds = 10;
constexpr int kHungarianTrials = 200;
constexpr int kPoolClasses = 100;
constexpr double kMinNovel = 0.85;
constexpr double kMaxForgetting = 0.05;
constexpr double kMinKnown = 0.90;
constexpr double kCountTolerance = 0.15;
constexpr double kRunSeconds = 120.0;
constexpr double kStorageRatio = 0.01;
constexpr int kBenchmarkSeeds = 5;

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (!pass) detail << "; ";
      detail << what;
      pass = false;
    }
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

// FD over a matrix argument.
Vector fd(const std::function<double(const Matrix&)>& f, const Matrix& at) {
  return finite_diff_grad(
      [&](std::span<const double> p) {
        Matrix m = at;
        std::copy(p.begin(), p.end(), m.data().begin());
        return f(m);
      },
      at.data());
}

OrthogonalBank assigned_bank(std::size_t dim, std::size_t classes, Rng& rng) {
  OrthogonalBank bank = OrthogonalBank::random(dim, 0.1, rng);
  bank.optimize({.steps = 300});
  for (std::size_t c = 0; c < classes; ++c) {
    Vector m(dim);
    for (double& v : m) v = rng.normal();
    bank.assign(static_cast<Label>(c), m);
  }
  return bank;
}

std::vector<Label> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<Label> out(n);
  for (auto& l : out) l = static_cast<Label>(rng.uniform_index(classes));
  return out;
}

Verdict gradients() {
  Verdict v;
  const auto t0 = Clock::now();
  double worst = 0.0;
  auto note = [&](double err, const char* name, int seed) {
    worst = std::max(worst, err);
    if (!(err <= kGradRelErr)) {
      v.require(false, std::string(name) + " seed " + std::to_string(seed) + " rel-err " + std::to_string(err));
    }
  };
  for (int seed = 0; seed < kGradInstances; ++seed) {
    Rng rng(1000 + static_cast<std::uint64_t>(seed));
    const std::size_t dim = 3 + rng.uniform_index(6);
    const std::size_t classes = std::min<std::size_t>(2 + rng.uniform_index(4), dim);

    // Contrastive loss, both forms, with respect to f and the prototypes.
    for (bool softplus : {false, true}) {
      std::vector<Label> labels(classes);
      std::iota(labels.begin(), labels.end(), 0);
      const Matrix p = random_matrix(classes, dim, rng);
      Vector f(dim);
      for (double& x : f) x = rng.normal();
      const Label y = static_cast<Label>(rng.uniform_index(classes));
      const ContrastiveHyper h{32.0, 0.1, softplus};
      const auto res = contrastive_loss(f, y, PrototypeBank(labels, p, true), h);
      const auto nf = finite_diff_grad(
          [&](std::span<const double> x) {
            return contrastive_loss(x, y, PrototypeBank(labels, p, true), h).loss;
          },
          f, 1e-6);
      const auto np = fd(
          [&](const Matrix& m) { return contrastive_loss(f, y, PrototypeBank(labels, m, true), h).loss; }, p);
      note(max_relative_error(res.grad_f, nf), "contrastive(f)", seed);
      note(max_relative_error(res.grad_prototypes.data(), np), "contrastive(P)", seed);
    }

    // Orthogonality loss, with and without the self term.
    for (bool self : {true, false}) {
      const Matrix g = random_matrix(dim, dim, rng);
      const auto res = orthogonality_loss(g, 0.1, self);
      const auto ng = fd([&](const Matrix& m) { return orthogonality_loss(m, 0.1, self).loss; }, g);
      note(max_relative_error(res.grad.data(), ng), "orthogonality", seed);
    }

    const OrthogonalBank bank = assigned_bank(dim, classes, rng);
    const std::size_t n = 2 + rng.uniform_index(5);
    const auto labels = random_labels(n, classes, rng);
    const auto replay_labels = random_labels(3, classes, rng);
    const Matrix z = random_matrix(n, dim, rng);
    const Matrix r = random_matrix(3, dim, rng);

    // Current-batch cross-entropy.
    const auto ce = prototype_cross_entropy(z, labels, bank);
    note(max_relative_error(
             ce.grad_z.data(),
             fd([&](const Matrix& m) { return prototype_cross_entropy(m, labels, bank).loss; }, z)),
         "cross-entropy", seed);

    // Replay term alone: the current batch is held fixed.
    const auto total = incremental_loss(z, labels, r, replay_labels, bank);
    note(max_relative_error(
             total.grad_replay_z.data(),
             fd([&](const Matrix& m) { return incremental_loss(z, labels, m, replay_labels, bank).replay; },
                r)),
         "replay", seed);

    // Combined objective over both arguments.
    note(max_relative_error(
             total.grad_z.data(),
             fd([&](const Matrix& m) { return incremental_loss(m, labels, r, replay_labels, bank).loss; },
                z)),
         "combined(z)", seed);
    note(max_relative_error(
             total.grad_replay_z.data(),
             fd([&](const Matrix& m) { return incremental_loss(z, labels, m, replay_labels, bank).loss; },
                r)),
         "combined(replay)", seed);
  }
  const double secs = seconds_since(t0);
  v.require(secs < kGradSeconds, "took " + std::to_string(secs) + " s");
  if (v.pass) v.detail << "worst rel-err " << worst << " over " << kGradInstances << " instances, " << secs << " s";
  return v;
}

Verdict orthogonality() {
  Verdict v;
  for (std::size_t d : {8, 16, 64}) {
    Rng rng(d);
    OrthogonalBank bank = OrthogonalBank::random(d, 0.1, rng);
    bank.optimize({});
    const double cos = max_abs_offdiag_cosine(bank.vectors());
    double norm_err = 0.0;
    for (std::size_t i = 0; i < bank.size(); ++i) norm_err = std::max(norm_err, std::abs(norm(bank.prototype(i)) - 1.0));
    v.require(cos <= kOrthoCos, "d=" + std::to_string(d) + " max|cos| " + std::to_string(cos));
    v.require(norm_err <= kOrthoNorm, "d=" + std::to_string(d) + " norm error " + std::to_string(norm_err));
    if (v.pass) v.detail << "d=" << d << " max|cos| " << cos << " ";
  }
  return v;
}

long long brute_force_match(const std::vector<std::vector<long long>>& m) {
  const std::size_t r = m.size(), c = m[0].size(), n = std::max(r, c);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  long long best = 0;
  do {
    long long s = 0;
    for (std::size_t i = 0; i < r; ++i) {
      if (perm[i] < c) s += m[i][perm[i]];
    }
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Verdict clustering() {
  Verdict v;
  int ap_ok = 0;
  for (std::size_t k : {3, 4, 5}) {
    for (int seed = 0; seed < kApSeeds; ++seed) {
      Rng rng(static_cast<std::uint64_t>(100 * k + seed));
      const auto b = testing::simplex_blobs(k, 30, 0.05, k + 2, rng);
      const auto count = affinity_propagation(b.points).cluster_count();
      if (count == k) {
        ++ap_ok;
      } else {
        v.require(false, "AP k=" + std::to_string(k) + " seed " + std::to_string(seed) + " found " +
                             std::to_string(count));
      }
    }
  }
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    const auto b = testing::simplex_blobs(4, 30, 0.25, 6, rng);
    const auto fit = gmm_fit(b.points, 4, rng);
    for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i) {
      if (fit.log_likelihood[i] < fit.log_likelihood[i - 1] - 1e-9) {
        v.require(false, "GMM log-likelihood dropped at seed " + std::to_string(seed));
        break;
      }
    }
  }
  Rng rng(7);
  int hungarian_ok = 0;
  for (int trial = 0; trial < kHungarianTrials; ++trial) {
    const std::size_t r = 1 + rng.uniform_index(7), c = 1 + rng.uniform_index(7);
    std::vector<std::vector<long long>> m(r, std::vector<long long>(c));
    for (auto& row : m) {
      for (auto& x : row) x = static_cast<long long>(rng.uniform_index(50));
    }
    if (hungarian_match(m).matched == brute_force_match(m)) ++hungarian_ok;
  }
  v.require(hungarian_ok == kHungarianTrials, "Hungarian " + std::to_string(hungarian_ok) + "/" +
                                                  std::to_string(kHungarianTrials));
  if (v.pass) v.detail << "AP " << ap_ok << "/30, GMM monotone, Hungarian " << hungarian_ok << "/" << kHungarianTrials;
  return v;
}

Clusters singleton_clusters(std::span<const Vector> reps, std::vector<std::size_t> ids) {
  Clusters c;
  for (std::size_t i : ids) {
    c.members.push_back({i});
    c.means.push_back(reps[i]);
  }
  return c;
}

Verdict pools_and_merge() {
  Verdict v;
  Rng rng(11);
  RepsByClass by_class;
  for (int c = 0; c < kPoolClasses; ++c) {
    const std::size_t n = 1 + rng.uniform_index(40);
    auto& reps = by_class[c];
    for (std::size_t i = 0; i < n; ++i) {
      Vector x(8);
      for (double& e : x) e = rng.normal();
      reps.push_back(x);
    }
  }
  const std::size_t m = 10;
  const StaticPool pool = build_static_pool(by_class, m);
  int pool_ok = 0;
  for (const auto& [label, reps] : by_class) {
    const Vector mean = mean_of(reps);
    std::vector<std::size_t> idx(reps.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return squared_distance(reps[a], mean) < squared_distance(reps[b], mean);
    });
    idx.resize(std::min(m, idx.size()));
    std::vector<Vector> expect;
    for (std::size_t i : idx) expect.push_back(reps[i]);
    if (pool.entries().at(label) == expect) ++pool_ok;
  }
  v.require(pool_ok == kPoolClasses, "static pool " + std::to_string(pool_ok) + "/" + std::to_string(kPoolClasses));

  // Chains: consecutive points 0.9 apart merge into one component at lambda 1
  // even though the ends are far apart; a distant point stays alone.
  const std::vector<Vector> line{{0.0}, {0.9}, {1.8}, {2.7}, {10.0}, {10.5}};
  const auto chain = singleton_clusters(line, {0, 1, 2, 3, 4, 5});
  const auto merged = merge_classes(line, chain, 1.0);
  v.require(merged.size() == 2, "chain produced " + std::to_string(merged.size()) + " components");
  if (merged.size() == 2) {
    auto a = merged.members[0];
    std::sort(a.begin(), a.end());
    v.require(a == std::vector<std::size_t>{0, 1, 2, 3}, "chain closure wrong");
  }
  v.require(merge_classes(line, merged, 1.0).members == merged.members, "merge not idempotent");
  const auto disjoint = singleton_clusters(line, {0, 2, 4});
  v.require(merge_classes(line, disjoint, 1.0).size() == 3, "non-adjacent points merged");

  int cal_ok = 0;
  for (int seed = 0; seed < 5; ++seed) {
    Rng r(static_cast<std::uint64_t>(50 + seed));
    const std::size_t classes = 4 + static_cast<std::size_t>(seed);
    const auto b = testing::simplex_blobs(classes, 26, 0.05, classes + 2, r);
    std::vector<Vector> means;
    for (std::size_t c = 0; c < classes; ++c) {
      means.push_back(mean_of(std::span<const Vector>(b.points).subspan(c * 26, 26)));
    }
    const auto grid = default_lambda_grid(means);
    const auto cal = calibrate_merge_threshold(b.points, classes, grid, {}, r);
    const auto at = static_cast<std::size_t>(std::find(grid.begin(), grid.end(), cal.lambda) - grid.begin());
    if (cal.merged_counts[at] == classes) ++cal_ok;
  }
  v.require(cal_ok == 5, "calibration recovered the class count on " + std::to_string(cal_ok) + "/5");
  if (v.pass) v.detail << "static pool " << pool_ok << "/" << kPoolClasses << ", chain closure ok, calibration 5/5";
  return v;
}

EngineConfig benchmark_config(int seed) {
  EngineConfig c;
  c.seed = static_cast<std::uint64_t>(seed);
  return c;
}

Stream benchmark_stream(int seed) {
  StreamSpec s;
  s.seed = static_cast<std::uint64_t>(seed);
  return generate_stream(s);
}

Verdict benchmark() {
  Verdict v;
  for (int seed = 0; seed < kBenchmarkSeeds; ++seed) {
    const auto t0 = Clock::now();
    const RunResult run = run_stream(benchmark_stream(seed), benchmark_config(seed));
    const double secs = seconds_since(t0);
    const auto& s = run.summary;
    const std::string tag = "seed " + std::to_string(seed);
    v.require(s.m_d >= kMinNovel, tag + " M_d " + std::to_string(s.m_d));
    v.require(s.m_f <= kMaxForgetting, tag + " M_f " + std::to_string(s.m_f));
    v.require(s.m_o >= kMinKnown, tag + " M_o " + std::to_string(s.m_o));
    v.require(secs < kRunSeconds, tag + " took " + std::to_string(secs) + " s");
    std::ostringstream counts;
    for (const auto& st : run.stages) {
      if (st.stage == 0) continue;
      const double truth = static_cast<double>(st.true_novel);
      const double est = static_cast<double>(st.estimated_novel);
      v.require(std::abs(est - truth) <= kCountTolerance * truth,
                tag + " stage " + std::to_string(st.stage) + " n=" + std::to_string(st.estimated_novel) +
                    " truth " + std::to_string(st.true_novel));
      counts << st.estimated_novel << "/" << st.true_novel << " ";
    }
    std::cout << "  " << tag << ": M_o " << s.m_o << " M_d " << s.m_d << " M_f " << s.m_f << " n " << counts.str()
              << secs << " s\n";
  }
  if (v.pass) v.detail << "all " << kBenchmarkSeeds << " seeds within bounds";
  return v;
}

Verdict ablations() {
  Verdict v;
  double full_f = 0, full_d = 0, cio_f = 0, jdn_d = 0, ied_d = 0;
  for (int seed = 0; seed < kBenchmarkSeeds; ++seed) {
    const Stream stream = benchmark_stream(seed);
    auto run = [&](auto tweak) {
      EngineConfig c = benchmark_config(seed);
      tweak(c.ablation);
      return run_stream(stream, c).summary;
    };
    const auto full = run([](AblationFlags&) {});
    const auto no_cio = run([](AblationFlags& a) { a.cio = false; });
    const auto no_jdn = run([](AblationFlags& a) { a.jdn = false; });
    const auto no_ied = run([](AblationFlags& a) { a.ied = false; });
    std::cout << "  seed " << seed << ": full M_f " << full.m_f << " M_d " << full.m_d << " | no-cio M_f "
              << no_cio.m_f << " | no-jdn M_d " << no_jdn.m_d << " | no-ied M_d " << no_ied.m_d << "\n";
    full_f += full.m_f;
    full_d += full.m_d;
    cio_f += no_cio.m_f;
    jdn_d += no_jdn.m_d;
    ied_d += no_ied.m_d;
  }
  const double n = kBenchmarkSeeds;
  full_f /= n, full_d /= n, cio_f /= n, jdn_d /= n, ied_d /= n;
  v.require(cio_f > full_f, "no-cio mean M_f " + std::to_string(cio_f) + " vs " + std::to_string(full_f));
  v.require(jdn_d < full_d, "no-jdn mean M_d " + std::to_string(jdn_d) + " vs " + std::to_string(full_d));
  v.require(ied_d < full_d, "no-ied mean M_d " + std::to_string(ied_d) + " vs " + std::to_string(full_d));
  if (v.pass) {
    v.detail << "means over paired seeds: M_f " << full_f << " -> " << cio_f << " (no-cio), M_d " << full_d << " -> "
             << jdn_d << " (no-jdn), " << ied_d << " (no-ied)";
  }
  return v;
}

Verdict storage() {
  Verdict v;
  const Stream stream = benchmark_stream(0);
  const EngineConfig cfg = benchmark_config(0);
  Engine engine(cfg);
  engine.run_initial_stage(stream.stages[0].rows, *stream.stages[0].labels);
  double worst_ratio = 0.0;
  for (int t = 0; t < static_cast<int>(kStageCount); ++t) {
    if (t > 0) engine.run_incremental_stage(stream.stages[static_cast<std::size_t>(t)].rows, t);
    const auto rep = engine.storage();
    const std::size_t d = cfg.backbone_dim;
    const std::size_t static_expect = engine.static_pool().entry_count() * d * sizeof(double);
    const std::size_t dynamic_expect = engine.dynamic_pool().size() * d * sizeof(double);
    v.require(rep.static_pool_bytes == static_expect, "static pool bytes mismatch at stage " + std::to_string(t));
    v.require(rep.dynamic_pool_bytes == dynamic_expect, "dynamic pool bytes mismatch at stage " + std::to_string(t));
    std::cout << "  stage " << t << ": pools " << rep.additional_bytes() << " B, model " << rep.model_parameter_bytes
              << " B, ratio " << rep.ratio() << "\n";
    worst_ratio = std::max(worst_ratio, rep.ratio());
  }
  v.require(worst_ratio < kStorageRatio, "additional storage is " + std::to_string(100 * worst_ratio) +
                                             "% of model bytes (limit 1%)");
  if (v.pass) v.detail << "byte accounting exact, worst ratio " << worst_ratio;
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int shell(const std::string& cmd) {
  std::cout << "  $ " << cmd << "\n";
  return std::system(cmd.c_str());
}

Verdict determinism() {
  Verdict v;
  const fs::path root = fs::temp_directory_path() / "ccd_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string cli = CCD_CLI_PATH;
  const std::string quiet = " > " + (root / "log.txt").string() + " 2>&1";
  v.require(shell(cli + " generate --seed 3 -o " + (root / "stream").string() + quiet) == 0, "generate failed");
  for (const char* name : {"a", "b"}) {
    v.require(shell(cli + " run --stream " + (root / "stream").string() + " --seed 3 -o " + (root / name).string() +
                    quiet) == 0,
              std::string("run ") + name + " failed");
  }
  if (!v.pass) return v;
  const std::string a = slurp(root / "a" / "report.json");
  const std::string b = slurp(root / "b" / "report.json");
  v.require(!a.empty(), "empty report");
  v.require(a == b, "report.json differs between runs");
  v.require(slurp(root / "a" / "predictions.csv") == slurp(root / "b" / "predictions.csv"), "predictions differ");
  if (v.pass) v.detail << "report.json identical (" << a.size() << " bytes)";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Verdict()>>> criteria = {
      {1, gradients}, {2, orthogonality}, {3, clustering}, {4, pools_and_merge},
      {5, benchmark}, {6, ablations},     {7, storage},    {8, determinism},
  };
  int only = 0;
  if (argc > 1) only = std::atoi(argv[1]);
  bool all_pass = true;
  for (const auto& [id, check] : criteria) {
    if (only != 0 && id != only) continue;
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail.str() << std::endl;
    all_pass = all_pass && v.pass;
  }
  return all_pass ? 0 : 1;
}
