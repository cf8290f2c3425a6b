// pipevc — git-like version control for ML/data pipelines with
// metric-driven merge.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "pipevc/bench.hpp"
#include "pipevc/errors.hpp"
#include "pipevc/exec.hpp"
#include "pipevc/mergex.hpp"
#include "pipevc/search.hpp"
#include "pipevc/text.hpp"
#include "pipevc/vcs.hpp"

namespace fs = std::filesystem;
using namespace pipevc;

namespace {

struct CliConfig {
  std::string repo_path;
  std::string format = "table";
  std::uint64_t seed = 1;
  bool machine() const { return format == "machine"; }
};

std::string read_file_or_die(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) fail(Errc::io_failure, "cannot open " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string fmt_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12f", v);
  return buf;
}

fs::path resolve_repo(const CliConfig& cfg) {
  if (!cfg.repo_path.empty()) return cfg.repo_path;
  if (const char* env = std::getenv("PIPEVC_REPO")) return env;
  return ".";
}

Repository open_repo(const CliConfig& cfg) {
  return Repository::open(resolve_repo(cfg));
}

// Reads a component payload directory into entries (regular files only).
std::map<std::string, std::string> read_payload_dir(const fs::path& dir) {
  if (!fs::is_directory(dir))
    fail(Errc::io_failure, dir.string() + " is not a directory");
  std::map<std::string, std::string> entries;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file())
      entries[e.path().filename().string()] = read_file_or_die(e.path());
  if (!entries.count("metafile"))
    fail(Errc::bad_config, dir.string() + " has no metafile");
  return entries;
}

std::unique_ptr<Executor> make_executor(Repository& repo,
                                        const std::string& runner,
                                        bool real_sleep) {
  if (runner == "stub")
    return std::make_unique<VirtualExecutor>(repo.store(), repo.store());
  if (runner == "process") {
    fs::path work = fs::temp_directory_path() /
                    ("pipevc-run-" + std::to_string(::getpid()));
    fs::create_directories(work);
    return std::make_unique<ProcessExecutor>(repo.store(), repo.store(), work,
                                             real_sleep);
  }
  fail(Errc::bad_config, "unknown runner '" + runner + "'");
}

void print_commit(const CliConfig& cfg, const Commit& c) {
  if (cfg.machine()) {
    std::cout << "commit=" << c.id << "\n";
    std::cout << "branch=" << c.branch << "\n";
    std::cout << "sequence=" << c.sequence << "\n";
    std::cout << "parents=" << join(c.parents, " ") << "\n";
    for (const auto& [slot, cv] : c.pipeline.bindings)
      std::cout << "bind:" << slot << "=" << cv.key() << "\n";
    for (const auto& [metric, v] : c.scores)
      std::cout << "score:" << metric << "=" << fmt_score(v) << "\n";
  } else {
    std::cout << "commit " << c.id << "\n";
    std::cout << "  branch " << c.branch << ", sequence " << c.sequence
              << "\n";
    if (!c.parents.empty())
      std::cout << "  parents " << join(c.parents, " ") << "\n";
    for (const auto& [slot, cv] : c.pipeline.bindings)
      std::cout << "  " << slot << " = " << cv.name << "@"
                << cv.version.render() << "\n";
    for (const auto& [metric, v] : c.scores)
      std::cout << "  " << metric << " = " << fmt_score(v) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

int cmd_init(const CliConfig& cfg) {
  Repository repo = Repository::init(resolve_repo(cfg));
  std::cout << (cfg.machine() ? "initialized=" : "initialized repository at ")
            << repo.path().string() << "\n";
  return 0;
}

int cmd_branch(const CliConfig& cfg, const std::string& name,
               const std::string& from) {
  Repository repo = open_repo(cfg);
  Repository::WriterLock lock(repo.path());
  std::string base = from;
  if (base.empty()) {
    auto h = repo.head(repo.current_branch());
    if (!h) fail(Errc::unknown_commit, "current branch has no commits");
    base = *h;
  }
  repo.create_branch(name, base);
  if (cfg.machine())
    std::cout << "branch=" << name << "\nfrom=" << base << "\n";
  else
    std::cout << "created branch " << name << " at " << base.substr(0, 12)
              << "\n";
  return 0;
}

int cmd_checkout(const CliConfig& cfg, const std::string& branch) {
  Repository repo = open_repo(cfg);
  Repository::WriterLock lock(repo.path());
  repo.checkout(branch);
  std::cout << (cfg.machine() ? "branch=" : "switched to branch ") << branch
            << "\n";
  return 0;
}

int cmd_commit(const CliConfig& cfg, const std::vector<std::string>& binds,
               const std::string& spec_file, const std::string& runner,
               bool real_sleep, bool no_reuse) {
  Repository repo = open_repo(cfg);
  Repository::WriterLock lock(repo.path());
  const std::string branch = repo.current_branch();

  if (!repo.has_spec()) {
    if (spec_file.empty())
      fail(Errc::bad_config, "first commit needs --spec <file>");
    std::string name = "pipeline";
    std::vector<Slot> slots;
    std::vector<std::pair<std::string, std::string>> edges;
    for (const auto& line : split_lines(read_file_or_die(spec_file))) {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
      if (k == "name") name = v;
      if (k == "slot") {
        auto parts = split(v, ',');
        slots.push_back({trim(parts.at(0)), kind_from_name(trim(parts.at(1)))});
      }
      if (k == "edge") {
        auto parts = split(v, ',');
        edges.emplace_back(trim(parts.at(0)), trim(parts.at(1)));
      }
    }
    repo.register_spec(PipelineSpec(name, slots, edges));
  }
  const PipelineSpec& spec = repo.spec();

  // Start from the branch head's bindings; --bind overrides per slot.
  std::map<std::string, ComponentVersion> bindings;
  auto head_id = repo.head(branch);
  if (head_id) bindings = repo.commit(*head_id).pipeline.bindings;

  for (const auto& b : binds) {
    auto eq = b.find('=');
    if (eq == std::string::npos)
      fail(Errc::bad_config, "--bind wants slot=path, got '" + b + "'");
    std::string slot = b.substr(0, eq);
    fs::path dir = b.substr(eq + 1);
    if (!spec.has_slot(slot)) fail(Errc::unknown_slot, "no slot '" + slot + "'");
    auto entries = read_payload_dir(dir);
    Metafile meta = parse_metafile(entries.at("metafile"));
    ObjectManifest m =
        repo.store().put_object(pack_entries(entries), "payload");
    bindings[slot] = repo.register_component(meta, m.id, branch);
  }

  for (const Slot& s : spec.slots())
    if (!bindings.count(s.name))
      fail(Errc::bad_config, "slot '" + s.name + "' is not bound yet");

  PipelineVersion pv;
  pv.spec_name = spec.name();
  pv.bindings = bindings;

  auto ex = make_executor(repo, runner, real_sleep);
  PipelineRunOutcome run;
  if (head_id && !no_reuse) {
    const Commit& head = repo.commit(*head_id);
    auto prev_outputs = head.output_refs();
    auto prev_keys = head.binding_keys();
    run = run_pipeline(spec, pv, *ex, nullptr, &prev_outputs, &prev_keys);
  } else {
    run = run_pipeline(spec, pv, *ex, nullptr);
  }

  const Commit& c =
      repo.commit_pipeline(branch, pv, {run.outputs, run.scores, run.stats});
  print_commit(cfg, c);
  return 0;
}

int cmd_log(const CliConfig& cfg, const std::string& branch) {
  Repository repo = open_repo(cfg);
  std::string b = branch.empty() ? repo.current_branch() : branch;
  auto commits = repo.log(b);
  if (cfg.machine()) {
    for (const Commit* c : commits) {
      std::cout << "commit=" << c->id << " branch=" << c->branch
                << " sequence=" << c->sequence;
      std::vector<std::string> keys;
      for (const auto& [slot, cv] : c->pipeline.bindings)
        keys.push_back(slot + "=" + cv.key());
      std::cout << " " << join(keys, " ") << "\n";
    }
  } else {
    if (commits.empty()) std::cout << "no commits on " << b << "\n";
    for (const Commit* c : commits) {
      print_commit(cfg, *c);
      std::cout << "\n";
    }
  }
  return 0;
}

std::pair<std::string, std::string> branch_tips(Repository& repo,
                                                const std::string& head_branch,
                                                const std::string& merge_branch) {
  auto h = repo.head(head_branch);
  auto m = repo.head(merge_branch);
  if (!h || !m) fail(Errc::unknown_commit, "both branches need commits");
  return {*h, *m};
}

int cmd_spaces(const CliConfig& cfg, const std::string& head_branch,
               const std::string& merge_branch) {
  Repository repo = open_repo(cfg);
  auto [h, m] = branch_tips(repo, head_branch, merge_branch);
  SearchSpace spaces = component_search_spaces(repo, h, m);
  for (std::size_t i = 0; i < spaces.slots.size(); ++i) {
    std::vector<std::string> keys;
    for (const auto& v : spaces.versions[i]) keys.push_back(v.key());
    if (cfg.machine())
      std::cout << "space:" << spaces.slots[i] << "=" << join(keys, " ")
                << "\n";
    else
      std::cout << spaces.slots[i] << ": " << keys.size() << " versions ("
                << join(keys, ", ") << ")\n";
  }
  std::uint64_t upper = count_candidates_upper(spaces);
  std::cout << (cfg.machine() ? "candidates_upper=" : "candidate upper bound: ")
            << upper << "\n";
  return 0;
}

void print_tree(const CliConfig& cfg, const TreeNode& node,
                const CompatibilityLut& lut, int depth) {
  for (const auto& child : node.children) {
    bool pruned = node.component &&
                  !lut.allows(node.component->key(), child->component->key());
    std::string line;
    if (cfg.machine()) {
      line = "node=" + child->component->key() +
             " level=" + std::to_string(child->level) +
             " executed=" + (child->executed ? "1" : "0") +
             " pruned=" + (pruned ? "1" : "0");
    } else {
      line = std::string(static_cast<std::size_t>(depth) * 2, ' ') +
             child->component->key() + (child->executed ? " [executed]" : "") +
             (pruned ? " [pruned]" : "");
    }
    std::cout << line << "\n";
    if (!pruned) print_tree(cfg, *child, lut, depth + 1);
  }
}

int cmd_tree(const CliConfig& cfg, const std::string& head_branch,
             const std::string& merge_branch) {
  Repository repo = open_repo(cfg);
  auto [h, m] = branch_tips(repo, head_branch, merge_branch);
  SearchSpace spaces = component_search_spaces(repo, h, m);
  SearchTree tree = build_search_tree(repo.spec(), std::move(spaces));
  CompatibilityLut lut = CompatibilityLut::build(repo.spec(), tree.spaces());

  const Commit& anc = repo.common_ancestor(h, m);
  auto history = repo.commits_between(anc.id, h);
  for (const Commit* c : repo.commits_between(anc.id, m)) history.push_back(c);
  mark_executed_from_history(tree, history);

  print_tree(cfg, tree.root(), lut, 0);
  return 0;
}

int cmd_merge(const CliConfig& cfg, const std::string& merge_branch,
              bool ff_only, const std::string& metric,
              const std::string& strategy, const std::string& search,
              std::uint64_t budget, const std::string& runner,
              bool real_sleep) {
  Repository repo = open_repo(cfg);
  Repository::WriterLock lock(repo.path());
  const std::string head_branch = repo.current_branch();

  if (ff_only) {
    const Commit& c = repo.fast_forward_merge(head_branch, merge_branch);
    if (cfg.machine()) std::cout << "fast_forward=1\n";
    print_commit(cfg, c);
    return 0;
  }

  auto ex = make_executor(repo, runner, real_sleep);

  if (!search.empty()) {
    // Budgeted search merge: run candidates in the chosen order, then
    // commit the best one seen.
    auto [h, m] = branch_tips(repo, head_branch, merge_branch);
    const Commit& anc = repo.common_ancestor(h, m);
    SearchSpace spaces = component_search_spaces(repo, h, m);
    SearchTree tree = build_search_tree(repo.spec(), std::move(spaces));
    CompatibilityLut lut = CompatibilityLut::build(repo.spec(), tree.spaces());
    prune_tree(tree, lut);
    auto history = repo.commits_between(anc.id, h);
    for (const Commit* c : repo.commits_between(anc.id, m))
      history.push_back(c);
    mark_executed_from_history(tree, history, metric);
    ScoreState state = seed_scores(tree, history, metric);

    SearchBudget sb;
    if (budget > 0) sb.count = budget;
    Rng rng(cfg.seed);
    auto rows = run_search(tree, state, search_method_from_name(search), *ex,
                           sb, metric, &rng);
    if (rows.empty()) fail(Errc::not_mergeable, "search visited no candidate");

    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i].score > rows[best].score) best = i;

    // Recover the winning path's outputs from the tree.
    const auto& keys = rows[best].binding_keys;
    TreeNode* cur = &tree.root();
    PipelineVersion pv;
    pv.spec_name = repo.spec().name();
    RunRecord rr;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      TreeNode* next = nullptr;
      for (auto& child : cur->children)
        if (child->component->key() == keys[i]) next = child.get();
      if (!next || !next->output)
        fail(Errc::not_mergeable, "winner path lost its outputs");
      const std::string& slot = tree.spaces().slots[i];
      pv.bindings[slot] = *next->component;
      rr.outputs[slot] = *next->output;
      cur = next;
    }
    rr.scores[metric] = rows[best].score;
    const Commit& c = repo.create_merge_commit(head_branch, pv, rr, h, m);

    if (cfg.machine()) {
      std::cout << "search=" << search << "\nvisited=" << rows.size() << "\n";
      for (std::size_t i = 0; i < rows.size(); ++i)
        std::cout << "candidate:" << i << "=" << join(rows[i].binding_keys, "|")
                  << " score=" << fmt_score(rows[i].score) << "\n";
    } else {
      std::cout << "searched " << rows.size() << " candidates ("
                << search << ")\n";
    }
    print_commit(cfg, c);
    return 0;
  }

  MergeOutcome out = metric_merge(repo, head_branch, merge_branch, metric,
                                  strategy_from_name(strategy), *ex);
  if (cfg.machine()) {
    std::cout << "strategy=" << out.report.strategy << "\n";
    std::cout << "candidates_total=" << out.report.candidates_total << "\n";
    std::cout << "candidates_after_pruning="
              << out.report.candidates_after_pruning << "\n";
    std::cout << "nodes_executed=" << out.report.nodes_executed << "\n";
    std::cout << "winner_score=" << fmt_score(out.report.winner().score)
              << "\n";
  } else {
    std::cout << out.report.csv();
  }
  print_commit(cfg, *out.commit);
  return 0;
}

int cmd_stats(const CliConfig& cfg) {
  Repository repo = open_repo(cfg);
  StoreStats s = repo.store().stats();
  if (cfg.machine()) {
    std::cout << "physical_bytes=" << s.physical_bytes << "\n";
    std::cout << "logical_bytes=" << s.logical_bytes << "\n";
    std::cout << "chunk_count=" << s.chunk_count << "\n";
    std::cout << "object_count=" << s.object_count << "\n";
    std::cout << "commits=" << repo.commit_count() << "\n";
    std::cout << "branches=" << repo.branches().size() << "\n";
  } else {
    std::cout << "store: " << s.physical_bytes << " physical / "
              << s.logical_bytes << " logical bytes, " << s.chunk_count
              << " chunks, " << s.object_count << " objects\n";
    std::cout << "commits: " << repo.commit_count() << ", branches: "
              << repo.branches().size() << "\n";
  }
  return 0;
}

int cmd_bench(const CliConfig& cfg, const std::string& which,
              const std::string& config_file, const std::string& out_file) {
  HistoryConfig hc = config_file.empty()
                         ? HistoryConfig{}
                         : history_config_from_kv(read_file_or_die(config_file));
  fs::path work = fs::temp_directory_path() /
                  ("pipevc-bench-" + std::to_string(::getpid()));
  fs::remove_all(work);
  fs::create_directories(work);

  std::string csv;
  if (which == "linear") {
    csv = curves_csv(linear_experiment(hc, work).points);
  } else if (which == "nonlinear") {
    csv = nonlinear_csv(nonlinear_experiment(hc, work));
  } else {
    fail(Errc::bad_config, "bench wants 'linear' or 'nonlinear'");
  }

  if (out_file.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(out_file, std::ios::trunc);
    f << csv;
    std::cout << (cfg.machine() ? "wrote=" : "wrote ") << out_file << "\n";
  }
  fs::remove_all(work);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pipevc — versioned ML pipelines with metric-driven merge"};
  app.require_subcommand(1);

  CliConfig cfg;
  app.add_option("--repo", cfg.repo_path,
                 "repository path (default: $PIPEVC_REPO or .)");
  app.add_option("--format", cfg.format, "output format: table|machine")
      ->check(CLI::IsMember({"table", "machine"}));
  app.add_option("--seed", cfg.seed, "rng seed for randomized operations");

  auto* c_init = app.add_subcommand("init", "create an empty repository");

  auto* c_branch = app.add_subcommand("branch", "create a branch");
  std::string branch_name, branch_from;
  c_branch->add_option("name", branch_name)->required();
  c_branch->add_option("--from", branch_from, "base commit (default: head)");

  auto* c_checkout = app.add_subcommand("checkout", "switch current branch");
  std::string checkout_branch;
  c_checkout->add_option("branch", checkout_branch)->required();

  auto* c_commit = app.add_subcommand("commit", "run and commit the pipeline");
  std::vector<std::string> binds;
  std::string spec_file, runner = "process";
  bool real_sleep = false, no_reuse = false;
  c_commit->add_option("--bind", binds, "slot=payload-dir (repeatable)");
  c_commit->add_option("--spec", spec_file, "pipeline spec file (first commit)");
  c_commit->add_option("--runner", runner, "process|stub");
  c_commit->add_flag("--real-sleep", real_sleep, "stubs actually sleep");
  c_commit->add_flag("--no-reuse", no_reuse, "re-run every slot");

  auto* c_log = app.add_subcommand("log", "list branch history");
  std::string log_branch;
  c_log->add_option("--branch", log_branch);

  auto* c_spaces = app.add_subcommand("spaces", "component search spaces");
  std::string sp_head, sp_merge;
  c_spaces->add_option("head", sp_head)->required();
  c_spaces->add_option("merge_head", sp_merge)->required();

  auto* c_tree = app.add_subcommand("tree", "pipeline search tree");
  std::string tr_head, tr_merge;
  c_tree->add_option("head", tr_head)->required();
  c_tree->add_option("merge_head", tr_merge)->required();

  auto* c_merge = app.add_subcommand("merge", "merge a branch into the current");
  std::string merge_branch, metric = "score", strategy = "pcpr", search;
  std::uint64_t budget = 0;
  bool ff_only = false, merge_real_sleep = false;
  std::string merge_runner = "stub";
  c_merge->add_option("branch", merge_branch)->required();
  c_merge->add_flag("--ff-only", ff_only, "fast-forward or fail");
  c_merge->add_option("--metric", metric);
  c_merge->add_option("--strategy", strategy, "naive|full|pc|pcpr");
  c_merge->add_option("--search", search, "prioritized|random");
  c_merge->add_option("--budget", budget, "candidate count budget");
  c_merge->add_option("--runner", merge_runner, "process|stub");
  c_merge->add_flag("--real-sleep", merge_real_sleep);

  auto* c_stats = app.add_subcommand("stats", "repository statistics");

  auto* c_bench = app.add_subcommand("bench", "benchmark experiments");
  std::string bench_which, bench_config, bench_out;
  c_bench->add_option("which", bench_which, "linear|nonlinear")->required();
  c_bench->add_option("--config", bench_config, "key=value config file");
  c_bench->add_option("--out", bench_out, "write CSV here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error=UsageError message=" << e.what() << "\n";
    return 2;
  }

  try {
    if (c_init->parsed()) return cmd_init(cfg);
    if (c_branch->parsed()) return cmd_branch(cfg, branch_name, branch_from);
    if (c_checkout->parsed()) return cmd_checkout(cfg, checkout_branch);
    if (c_commit->parsed())
      return cmd_commit(cfg, binds, spec_file, runner, real_sleep, no_reuse);
    if (c_log->parsed()) return cmd_log(cfg, log_branch);
    if (c_spaces->parsed()) return cmd_spaces(cfg, sp_head, sp_merge);
    if (c_tree->parsed()) return cmd_tree(cfg, tr_head, tr_merge);
    if (c_merge->parsed())
      return cmd_merge(cfg, merge_branch, ff_only, metric, strategy, search,
                       budget, merge_runner, merge_real_sleep);
    if (c_stats->parsed()) return cmd_stats(cfg);
    if (c_bench->parsed())
      return cmd_bench(cfg, bench_which, bench_config, bench_out);
  } catch (const Error& e) {
    std::cerr << "error=" << errc_name(e.code()) << " message=" << e.what()
              << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error=Internal message=" << e.what() << "\n";
    return 1;
  }
  return 2;
}
