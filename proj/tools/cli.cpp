#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include "fednnu/dataset_io.hpp"
#include "fednnu/error.hpp"
#include "fednnu/experiment.hpp"
#include "fednnu/json_io.hpp"

namespace fednnu::cli {
namespace fs = std::filesystem;
namespace {

// "4096", "512M", "8G", "64K" (binary multiples) -> bytes.
std::uint64_t parse_size(const std::string& text) {
  if (text.empty()) throw ConfigError("budget: empty value");
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(text, &pos);
  } catch (const std::exception&) {
    throw ConfigError("budget: not a number: " + text);
  }
  std::string suffix = text.substr(pos);
  std::uint64_t mult = 1;
  if (suffix == "K" || suffix == "KiB") {
    mult = 1024;
  } else if (suffix == "M" || suffix == "MiB") {
    mult = kMiB;
  } else if (suffix == "G" || suffix == "GiB") {
    mult = kGiB;
  } else if (!suffix.empty()) {
    throw ConfigError("budget: unknown suffix '" + suffix + "'");
  }
  if (n == 0) throw ConfigError("budget: must be positive");
  return n * mult;
}

fs::path output_dir(const std::string& flag, const std::string& from_config) {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return from_config;
  if (const char* env = std::getenv("FEDNNU_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return "fednnu-out";
}

std::string state_file(const std::string& prefix, NodeId id) {
  return prefix + "node" + std::to_string(id) + ".fnsd";
}

void print_table(const MetricsReport& rep, std::ostream& out) {
  out << report_to_csv(rep);
}

int cmd_run(const std::string& config_path, const std::string& out_flag, std::optional<std::uint64_t> seed,
            const std::string& transport, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = config_from_json(read_text_file(config_path));
  if (seed) cfg.seed = *seed;
  if (!transport.empty()) {
    try {
      cfg.transport = carrier_from_string(transport);
    } catch (const UsageError& e) {
      throw ConfigError(std::string("--transport: ") + e.what());
    }
  }
  cfg.validate();
  const fs::path dir = output_dir(out_flag, cfg.output);
  const auto t0 = std::chrono::steady_clock::now();
  const MetricsReport rep = run_experiment(cfg, [&](const std::string& line) { err << line << std::endl; });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text_file(dir / "report.json", report_to_json(rep));
  write_text_file(dir / "results.csv", report_to_csv(rep));
  for (const auto& arm : rep.arms) {
    for (const auto& [id, sd] : arm.final_states) {
      write_binary_file(dir / "states" / state_file(std::string(to_string(arm.arm)) + "_", id),
                        encode_state_dict(sd));
    }
  }
  print_table(rep, out);
  err << "wrote " << (dir / "report.json").string() << " in " << secs << " s" << std::endl;
  return kOk;
}

int cmd_plan(const std::vector<std::string>& files, const std::string& budget, const std::string& out_flag,
             std::ostream& out) {
  const std::uint64_t bytes = parse_size(budget);
  std::vector<std::pair<NodeId, Fingerprint>> locals;
  for (const auto& f : files) {
    NodeFingerprint nf;
    try {
      nf = fingerprint_from_json(read_text_file(f));
    } catch (const ConfigError& e) {
      throw ConfigError(f + ": " + e.what());
    }
    locals.emplace_back(nf.node_id, nf.fingerprint);
  }
  GlobalFingerprint global;
  try {
    global = aggregate_fingerprints(locals);
  } catch (const ProtocolError& e) {
    throw ConfigError(e.what());
  }
  const std::string text = plan_to_json(make_plan(global, bytes));
  if (out_flag.empty()) {
    out << text;
  } else {
    write_text_file(out_flag, text);
  }
  return kOk;
}

int cmd_fingerprint(const std::string& dataset_dir, const std::string& out_flag, std::ostream& out) {
  const StoredDataset ds = load_dataset(dataset_dir);
  Fingerprint fp;
  try {
    fp = extract_fingerprint(ds.cases);
  } catch (const UsageError& e) {
    throw ConfigError(dataset_dir + ": " + e.what());
  }
  const std::string text = fingerprint_to_json({ds.center_id, fp});
  if (out_flag.empty()) {
    out << text;
  } else {
    write_text_file(out_flag, text);
  }
  return kOk;
}

int cmd_gen(const std::string& center_path, const std::string& out_flag, std::ostream& err) {
  const SyntheticCenterSpec spec = center_spec_from_json(read_text_file(center_path));
  const fs::path dir = output_dir(out_flag, "");
  save_dataset(dir, {spec.center_id, spec.seed, gen_center(spec)});
  err << "wrote " << spec.num_cases << " cases to " << dir.string() << std::endl;
  return kOk;
}

int cmd_serve(int port, const std::string& config_path, const std::string& port_file, const std::string& out_flag,
              std::ostream& err) {
  ServeConfig sc = serve_config_from_json(read_text_file(config_path));
  Address bind = parse_address(sc.address);
  if (port >= 0) {
    if (port > 65535) throw ConfigError("--port: out of range");
    bind.port = static_cast<std::uint16_t>(port);
  }
  TcpServerTransport server(bind, sc.federation.expected_nodes);
  err << "listening on " << bind.host << ":" << server.port() << std::endl;
  if (!port_file.empty()) write_text_file(port_file, std::to_string(server.port()) + "\n");

  Coordinator coord(sc.federation, server);
  std::optional<RoundOutcome> last;
  coord.on_round = [&](const RoundOutcome& o) {
    err << "round " << o.round + 1 << "/" << sc.federation.total_rounds << ": " << o.compat.size()
        << " shared layers" << std::endl;
    last = o;
  };
  coord.run();
  server.close();
  if (!out_flag.empty() && last) {
    const fs::path dir = out_flag;
    write_binary_file(dir / "aggregate.fnsd", encode_state_dict(last->aggregated));
    for (const auto& [id, sd] : last->updates) write_binary_file(dir / ("update_" + state_file("", id)), encode_state_dict(sd));
  }
  err << "federation complete" << std::endl;
  return kOk;
}

int cmd_join(const std::string& addr, const std::string& node_config, const std::string& out_flag,
             std::optional<std::uint64_t> seed, int connect_timeout_ms, std::ostream& out, std::ostream& err) {
  NodeConfig nc = node_config_from_json(read_text_file(node_config));
  if (seed) nc.seed = *seed;
  Address server;
  try {
    server = parse_address(addr);
  } catch (const Error& e) {
    throw ConfigError(std::string("--addr: ") + e.what());
  }
  const NodeId id = nc.center.center_id;
  const CenterSplit split = split_center(gen_center(nc.center), nc.test_fraction);
  LearnerSettings ls;
  ls.node_id = id;
  ls.memory_budget = nc.memory_budget;
  ls.lr = nc.lr;
  ls.seed = nc.seed;
  ls.shared_init = nc.shared_init;
  ls.epochs_per_round = nc.epochs_per_round;
  SegLearner learner(ls, split.train);

  TcpClientTransport transport(server, Millis(connect_timeout_ms));
  Participant node(id, learner, transport, Millis(std::uint64_t{nc.timeout_s} * 1000));
  node.run();
  transport.close();

  const EvalSummary ev = evaluate(learner.model(), split.test, nc.hd95_units);
  MetricsReport rep;
  rep.rounds = node.state().round;
  rep.seed = nc.seed;
  rep.units = nc.hd95_units;
  ArmResult arm;
  arm.arm = Arm::Asym;
  arm.centers.push_back({id, ev});
  arm.plans.emplace(id, learner.plan());
  arm.messages_sent = transport.messages_sent();
  rep.arms.push_back(arm);
  if (!out_flag.empty()) {
    const fs::path dir = out_flag;
    write_binary_file(dir / state_file("", id), encode_state_dict(learner.state()));
    write_text_file(dir / ("node" + std::to_string(id) + "_report.json"), report_to_json(rep));
  }
  out << "node " << id << " done after " << node.state().round << " rounds, DSC " << ev.dsc << "\n";
  err << "plan: patch " << learner.plan().patch_size[0] << ", " << learner.plan().num_stages << " stages"
      << std::endl;
  return kOk;
}

}  // namespace

int report_exception(std::ostream& err) {
  try {
    throw;
  } catch (const VersionError& e) {
    err << "error: version mismatch: " << e.what() << std::endl;
    return kVersionMismatch;
  } catch (const ConnectionError& e) {
    err << "error: connection refused: " << e.what() << std::endl;
    return kConnectionRefused;
  } catch (const FederationAborted& e) {
    err << "error: federation aborted: " << e.what() << std::endl;
    return kAborted;
  } catch (const ProtocolError& e) {
    err << "error: federation aborted: " << e.what() << std::endl;
    return kAborted;
  } catch (const TimeoutError& e) {
    err << "error: federation aborted: " << e.what() << std::endl;
    return kAborted;
  } catch (const ChannelClosedError& e) {
    err << "error: federation aborted: " << e.what() << std::endl;
    return kAborted;
  } catch (const ConfigError& e) {
    err << "error: invalid configuration: " << e.what() << std::endl;
    return kConfig;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << std::endl;
    return kConfig;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << std::endl;
    return kInternal;
  } catch (...) {
    err << "internal error: unknown exception" << std::endl;
    return kInternal;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated self-configuring segmentation: experiments, planning and TCP federation"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  std::string out_flag;
  app.add_option("--seed", seed, "Override the configured seed");
  app.add_option("--out", out_flag, "Output directory or file (default: $FEDNNU_OUT_DIR)");

  std::string config_path, transport;
  auto* run_cmd = app.add_subcommand("run", "Run the configured experiment arms");
  run_cmd->add_option("config", config_path, "Experiment config (JSON)")->required();
  run_cmd->add_option("--transport", transport, "Override the carrier: sim|tcp");

  std::vector<std::string> fp_files;
  std::string budget;
  auto* plan_cmd = app.add_subcommand("plan", "Aggregate fingerprints and print the training plan");
  plan_cmd->add_option("fingerprints", fp_files, "Fingerprint files (JSON)")->required();
  plan_cmd->add_option("--budget", budget, "Memory budget in bytes (suffix K, M or G)")->required();

  int port = -1;
  std::string port_file;
  auto* serve_cmd = app.add_subcommand("serve", "Run the coordinator over TCP");
  serve_cmd->add_option("--port", port, "Listen port (0 picks one)");
  serve_cmd->add_option("--config", config_path, "Federation config (JSON)")->required();
  serve_cmd->add_option("--port-file", port_file, "Write the bound port here");

  std::string addr, node_config;
  int connect_timeout_ms = 5000;
  auto* join_cmd = app.add_subcommand("join", "Join a federation as one node");
  join_cmd->add_option("--addr", addr, "Server host:port")->required();
  join_cmd->add_option("--node-config", node_config, "Node config (JSON)")->required();
  join_cmd->add_option("--connect-timeout-ms", connect_timeout_ms, "Retry refused connections this long");

  std::string dataset_dir;
  auto* fp_cmd = app.add_subcommand("fingerprint", "Extract a dataset fingerprint");
  fp_cmd->add_option("dataset", dataset_dir, "Dataset directory")->required();

  std::string center_path;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic center dataset");
  gen_cmd->add_option("--center", center_path, "Center spec (JSON)")->required();

  for (auto* sub : {run_cmd, plan_cmd, serve_cmd, join_cmd, fp_cmd, gen_cmd}) {
    sub->add_option("--seed", seed, "Override the configured seed");
    sub->add_option("--out", out_flag, "Output directory or file (default: $FEDNNU_OUT_DIR)");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << std::endl;
    for (auto* sub : app.get_subcommands()) err << sub->help();
    return kConfig;
  }

  try {
    if (*run_cmd) return cmd_run(config_path, out_flag, seed, transport, out, err);
    if (*plan_cmd) return cmd_plan(fp_files, budget, out_flag, out);
    if (*serve_cmd) return cmd_serve(port, config_path, port_file, out_flag, err);
    if (*join_cmd) return cmd_join(addr, node_config, out_flag, seed, connect_timeout_ms, out, err);
    if (*fp_cmd) return cmd_fingerprint(dataset_dir, out_flag, out);
    if (*gen_cmd) return cmd_gen(center_path, out_flag, err);
  } catch (...) {
    return report_exception(err);
  }
  return kInternal;
}

}  // namespace fednnu::cli
