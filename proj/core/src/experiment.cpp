#include "fednnu/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <set>
#include <sstream>
#include <thread>

#include "fednnu/error.hpp"

namespace fednnu {
namespace {

std::string field(std::size_t i, const char* name) {
  return "centers[" + std::to_string(i) + "]." + name;
}

std::size_t num_test(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

const char* to_string(Arm a) {
  switch (a) {
    case Arm::Local: return "local";
    case Arm::Centralized: return "centralized";
    case Arm::Ffe: return "ffe";
    case Arm::Asym: return "asym";
  }
  return "unknown";
}

Arm arm_from_string(std::string_view s) {
  if (s == "local") return Arm::Local;
  if (s == "centralized") return Arm::Centralized;
  if (s == "ffe") return Arm::Ffe;
  if (s == "asym") return Arm::Asym;
  throw UsageError("unknown arm '" + std::string(s) + "' (expected local|centralized|ffe|asym)");
}

const char* to_string(Carrier c) { return c == Carrier::Sim ? "sim" : "tcp"; }

Carrier carrier_from_string(std::string_view s) {
  if (s == "sim") return Carrier::Sim;
  if (s == "tcp") return Carrier::Tcp;
  throw UsageError("unknown transport '" + std::string(s) + "' (expected sim|tcp)");
}

void ExperimentConfig::validate() const {
  if (arms.empty()) throw ConfigError("arms: at least one arm is required");
  if (std::set<Arm>(arms.begin(), arms.end()).size() != arms.size()) throw ConfigError("arms: duplicate arm");
  if (centers.empty()) throw ConfigError("centers: at least one center is required");
  if (!budgets.empty() && budgets.size() != centers.size()) {
    throw ConfigError("budgets: expected " + std::to_string(centers.size()) + " entries, got " +
                      std::to_string(budgets.size()));
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction: must be in (0, 1)");
  std::set<NodeId> ids;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const auto& c = centers[i];
    try {
      c.validate();
    } catch (const Error& e) {
      throw ConfigError("centers[" + std::to_string(i) + "]: " + e.what());
    }
    if (c.center_id == kServerId) throw ConfigError(field(i, "center_id") + ": reserved id");
    if (!ids.insert(c.center_id).second) {
      throw ConfigError(field(i, "center_id") + ": duplicate id " + std::to_string(c.center_id));
    }
    const std::size_t t = num_test(c.num_cases, test_fraction);
    if (t == 0 || t >= c.num_cases) {
      throw ConfigError(field(i, "num_cases") + ": " + std::to_string(c.num_cases) +
                        " cases leave an empty train or test split at test_fraction " + fmt(test_fraction));
    }
    if (!budgets.empty() && budgets[i] == 0) {
      throw ConfigError(field(i, "memory_budget_mib") + ": must be positive");
    }
  }
  if (!std::isfinite(lr) || lr < 0.0) throw ConfigError("lr: must be finite and >= 0");
  if (epochs_per_round == 0) throw ConfigError("epochs_per_round: must be >= 1");
  if (timeout_s == 0) throw ConfigError("timeout_s: must be >= 1");
  if (transport == Carrier::Tcp) {
    try {
      parse_address(address);
    } catch (const Error& e) {
      throw ConfigError(std::string("address: ") + e.what());
    }
  }
}

std::uint64_t ExperimentConfig::budget_for(NodeId center) const {
  if (budgets.empty()) return 8 * kGiB;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    if (centers[i].center_id == center) return budgets[i];
  }
  throw UsageError("no center " + std::to_string(center));
}

bool ExperimentConfig::shared_init_for(Arm arm) const {
  if (shared_init) return *shared_init;
  return arm == Arm::Ffe || arm == Arm::Asym;
}

CenterSplit split_center(const Dataset& cases, double test_fraction) {
  const std::size_t t = num_test(cases.size(), test_fraction);
  if (t == 0 || t >= cases.size()) throw ConfigError("split leaves an empty train or test set");
  CenterSplit s;
  s.train.assign(cases.begin(), cases.end() - static_cast<std::ptrdiff_t>(t));
  s.test.assign(cases.end() - static_cast<std::ptrdiff_t>(t), cases.end());
  return s;
}

double ArmResult::mean_dsc() const {
  if (centers.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : centers) s += c.eval.dsc;
  return s / static_cast<double>(centers.size());
}

const CenterResult& ArmResult::center(NodeId id) const {
  for (const auto& c : centers) {
    if (c.center_id == id) return c;
  }
  throw UsageError("no result for center " + std::to_string(id));
}

const ArmResult& MetricsReport::arm(Arm a) const {
  for (const auto& r : arms) {
    if (r.arm == a) return r;
  }
  throw UsageError(std::string("report has no ") + to_string(a) + " arm");
}

std::uint64_t run_federation(const FederationSettings& settings, std::map<NodeId, LocalLearner*> learners,
                             Carrier carrier, const std::string& address, const LatencyModel& latency,
                             const std::function<void(const RoundOutcome&)>& on_round) {
  if (learners.size() != settings.expected_nodes) {
    throw UsageError("federation expects " + std::to_string(settings.expected_nodes) + " nodes, got " +
                     std::to_string(learners.size()));
  }
  std::shared_ptr<SimNetwork> net;
  std::unique_ptr<ServerTransport> server;
  Address addr;
  if (carrier == Carrier::Sim) {
    net = SimNetwork::create(latency);
    server = net->server_endpoint();
  } else {
    addr = parse_address(address);
    auto tcp = std::make_unique<TcpServerTransport>(addr, learners.size());
    addr.port = tcp->port();
    server = std::move(tcp);
  }

  Coordinator coord(settings, *server);
  coord.on_round = on_round;
  std::exception_ptr server_error;
  std::vector<std::exception_ptr> node_errors(learners.size());
  std::vector<std::uint64_t> node_sent(learners.size(), 0);

  std::thread srv([&] {
    try {
      coord.run();
    } catch (...) {
      server_error = std::current_exception();
    }
  });
  std::vector<std::thread> nodes;
  std::size_t i = 0;
  for (auto& [id, learner] : learners) {
    nodes.emplace_back([&, id = id, learner = learner, i] {
      try {
        std::unique_ptr<ClientTransport> t;
        if (carrier == Carrier::Sim) {
          t = net->node_endpoint(id);
        } else {
          t = std::make_unique<TcpClientTransport>(addr, Millis(10'000));
        }
        Participant p(id, *learner, *t, settings.timeout);
        try {
          p.run();
        } catch (...) {
          node_sent[i] = t->messages_sent();
          throw;
        }
        node_sent[i] = t->messages_sent();
        t->close();
      } catch (...) {
        node_errors[i] = std::current_exception();
      }
    });
    ++i;
  }
  for (auto& t : nodes) t.join();
  srv.join();
  const std::uint64_t sent = server->messages_sent();
  server->close();

  if (server_error) std::rethrow_exception(server_error);
  for (const auto& e : node_errors) {
    if (e) std::rethrow_exception(e);
  }
  std::uint64_t total = sent;
  for (auto n : node_sent) total += n;
  return total;
}

ArmResult run_arm(const ExperimentConfig& cfg, Arm arm, const ExperimentLog& log) {
  cfg.validate();
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };

  std::map<NodeId, CenterSplit> splits;
  for (const auto& spec : cfg.centers) splits[spec.center_id] = split_center(gen_center(spec), cfg.test_fraction);

  auto settings_for = [&](NodeId id) {
    LearnerSettings s;
    s.node_id = id;
    s.memory_budget = cfg.budget_for(id);
    s.lr = cfg.lr;
    s.seed = cfg.seed;
    s.shared_init = cfg.shared_init_for(arm);
    s.epochs_per_round = cfg.epochs_per_round;
    return s;
  };
  auto describe = [](const TrainingPlan& p) {
    return "patch " + std::to_string(p.patch_size[0]) + " stages " + std::to_string(p.num_stages) + " batch " +
           std::to_string(p.batch_size);
  };

  auto logged_round = [](std::uint32_t t, std::uint32_t total) {
    return t == 0 || (t + 1) % 10 == 0 || t + 1 == total;
  };
  auto progress = [&](std::uint32_t t, const SegLearner& l) {
    return "round " + std::to_string(t + 1) + "/" + std::to_string(cfg.rounds) + ": loss " + fmt(l.last_loss());
  };

  ArmResult r;
  r.arm = arm;
  switch (arm) {
    case Arm::Local: {
      for (auto& [id, split] : splits) {
        SegLearner learner(settings_for(id), split.train);
        const std::vector<std::pair<NodeId, Fingerprint>> own{{id, learner.fingerprint()}};
        learner.configure(aggregate_fingerprints(own));
        say("local node " + std::to_string(id) + ": " + describe(learner.plan()));
        for (std::uint32_t t = 0; t < cfg.rounds; ++t) {
          learner.train_round(t);
          if (logged_round(t, cfg.rounds)) say("local node " + std::to_string(id) + " " + progress(t, learner));
        }
        r.plans.emplace(id, learner.plan());
        r.final_states.emplace(id, learner.state());
        r.centers.push_back({id, evaluate(learner.model(), split.test, cfg.hd95_units)});
      }
      break;
    }
    case Arm::Centralized: {
      const NodeId lead = splits.begin()->first;
      Dataset pooled;
      std::vector<std::pair<NodeId, Fingerprint>> fps;
      std::uint64_t budget = cfg.budget_for(lead);
      for (const auto& [id, split] : splits) {
        pooled.insert(pooled.end(), split.train.begin(), split.train.end());
        fps.emplace_back(id, extract_fingerprint(split.train));
        budget = std::min(budget, cfg.budget_for(id));
      }
      LearnerSettings s = settings_for(lead);
      s.memory_budget = budget;
      SegLearner learner(s, std::move(pooled));
      learner.configure(aggregate_fingerprints(fps));
      say("centralized: " + describe(learner.plan()));
      for (std::uint32_t t = 0; t < cfg.rounds; ++t) {
        learner.train_round(t);
        if (logged_round(t, cfg.rounds)) say("centralized " + progress(t, learner));
      }
      r.plans.emplace(lead, learner.plan());
      r.final_states.emplace(lead, learner.state());
      for (const auto& [id, split] : splits) {
        r.centers.push_back({id, evaluate(learner.model(), split.test, cfg.hd95_units)});
      }
      break;
    }
    case Arm::Ffe:
    case Arm::Asym: {
      std::map<NodeId, std::unique_ptr<SegLearner>> owned;
      std::map<NodeId, LocalLearner*> learners;
      for (auto& [id, split] : splits) {
        owned[id] = std::make_unique<SegLearner>(settings_for(id), split.train);
        learners[id] = owned[id].get();
      }
      FederationSettings fs;
      fs.strategy = arm == Arm::Ffe ? Strategy::FfeFedAvg : Strategy::AsymFedAvg;
      fs.expected_nodes = static_cast<std::uint32_t>(learners.size());
      fs.total_rounds = cfg.rounds;
      fs.matching = cfg.matching;
      fs.weighted = cfg.weighted;
      fs.timeout = Millis(std::uint64_t{cfg.timeout_s} * 1000);
      auto on_round = [&](const RoundOutcome& o) {
        if (logged_round(o.round, cfg.rounds)) {
          std::ostringstream loss;
          for (const auto& [id, learner] : owned) loss << " " << fmt(learner->last_loss());
          say(std::string(to_string(arm)) + " round " + std::to_string(o.round + 1) + "/" +
              std::to_string(cfg.rounds) + ": " + std::to_string(o.compat.size()) + " shared layers, loss" +
              loss.str());
        }
      };
      r.messages_sent = run_federation(fs, learners, cfg.transport, cfg.address, cfg.latency, on_round);
      for (auto& [id, learner] : owned) {
        say(std::string(to_string(arm)) + " node " + std::to_string(id) + ": " + describe(learner->plan()));
        r.plans.emplace(id, learner->plan());
        r.final_states.emplace(id, learner->state());
        r.centers.push_back({id, evaluate(learner->model(), splits[id].test, cfg.hd95_units)});
      }
      break;
    }
  }
  std::ostringstream os;
  os << to_string(arm) << " done: mean DSC " << fmt(r.mean_dsc());
  say(os.str());
  return r;
}

MetricsReport run_experiment(const ExperimentConfig& cfg, const ExperimentLog& log) {
  cfg.validate();
  MetricsReport rep;
  rep.rounds = cfg.rounds;
  rep.seed = cfg.seed;
  rep.units = cfg.hd95_units;
  for (Arm a : cfg.arms) rep.arms.push_back(run_arm(cfg, a, log));
  return rep;
}

}  // namespace fednnu
