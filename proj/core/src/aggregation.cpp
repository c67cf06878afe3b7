#include "fednnu/aggregation.hpp"

#include <algorithm>

#include "fednnu/error.hpp"

namespace fednnu {

const char* to_string(MatchMode mode) { return mode == MatchMode::Strict ? "strict" : "subset"; }

MatchMode match_mode_from_string(std::string_view s) {
  if (s == "strict") return MatchMode::Strict;
  if (s == "subset") return MatchMode::Subset;
  throw UsageError("unknown matching mode '" + std::string(s) + "' (expected strict|subset)");
}

std::vector<LayerId> CompatibleSet::ids() const {
  std::vector<LayerId> out;
  out.reserve(layers.size());
  for (const auto& [id, _] : layers) out.push_back(id);
  return out;
}

CompatibleSet match_layers(std::span<const StateDict> dicts, MatchMode mode) {
  if (dicts.empty()) throw UsageError("match_layers needs at least one state dict");

  std::set<NodeId> nodes;
  for (const auto& d : dicts) {
    if (!nodes.insert(d.node_id()).second) {
      throw UsageError("match_layers: duplicate node id " + std::to_string(d.node_id()));
    }
  }

  // layer -> dims -> holders
  std::map<LayerId, std::map<Shape, std::set<NodeId>>> holders;
  for (const auto& d : dicts) {
    for (const auto& [id, tensor] : d.entries()) holders[id][tensor.dims()].insert(d.node_id());
  }

  CompatibleSet out;
  for (auto& [id, by_dims] : holders) {
    if (mode == MatchMode::Strict) {
      if (by_dims.size() != 1) continue;
      auto& [dims, who] = *by_dims.begin();
      if (who.size() != dicts.size()) continue;
      out.layers.emplace(id, CompatibleSet::Layer{dims, who});
      continue;
    }
    // Subset: the largest agreeing group with >= 2 holders. std::map iterates
    // dims lexicographically, so ties go to the smallest dims.
    const std::pair<const Shape, std::set<NodeId>>* best = nullptr;
    for (const auto& group : by_dims) {
      if (group.second.size() < 2) continue;
      if (best == nullptr || group.second.size() > best->second.size()) best = &group;
    }
    if (best != nullptr) out.layers.emplace(id, CompatibleSet::Layer{best->first, best->second});
  }
  return out;
}

StateDict aggregate_asym(std::span<const StateDict> dicts, const CompatibleSet& compat,
                         const AggregationOptions& options) {
  std::map<NodeId, const StateDict*> by_node;
  std::uint32_t round = 0;
  for (const auto& d : dicts) {
    by_node[d.node_id()] = &d;
    round = std::max(round, d.round());
  }

  StateDict out(0, round);
  for (const auto& [id, layer] : compat.layers) {
    if (layer.participants.empty()) throw InternalError("compatible layer " + id.str() + " has no participants");
    Tensor acc(layer.dims, 0.0);
    double total_weight = 0.0;
    // std::set iterates node ids in ascending order.
    for (NodeId k : layer.participants) {
      auto it = by_node.find(k);
      if (it == by_node.end()) {
        throw InternalError("compatible set references node " + std::to_string(k) + " not among inputs");
      }
      const Tensor* t = it->second->find(id);
      if (t == nullptr) {
        throw InternalError("compatible set references layer " + id.str() + " missing from node " +
                            std::to_string(k));
      }
      if (t->dims() != layer.dims) {
        throw InternalError("layer " + id.str() + " of node " + std::to_string(k) + " has dims " +
                            shape_to_string(t->dims()) + ", compatible set says " + shape_to_string(layer.dims));
      }
      double w = 1.0;
      if (options.weighted) {
        auto wit = options.weights.find(k);
        if (wit == options.weights.end()) throw UsageError("no aggregation weight for node " + std::to_string(k));
        w = wit->second;
      }
      total_weight += w;
      if (options.weighted) {
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * (*t)[i];
      } else {
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += (*t)[i];
      }
    }
    if (!(total_weight > 0.0)) throw UsageError("aggregation weights for " + id.str() + " sum to zero");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] /= total_weight;
    out.insert(id, std::move(acc));
  }
  return out;
}

StateDict apply_update(const StateDict& local, const StateDict& aggregated) {
  StateDict out(local.node_id(), local.round() + 1);
  for (const auto& [id, tensor] : local.entries()) {
    const Tensor* agg = aggregated.find(id);
    if (agg == nullptr) {
      out.insert(id, tensor);
      continue;
    }
    if (agg->dims() != tensor.dims()) {
      throw ProtocolError("aggregated layer " + id.str() + " has dims " + shape_to_string(agg->dims()) +
                          " but local model has " + shape_to_string(tensor.dims()));
    }
    out.insert(id, *agg);
  }
  return out;
}

StateDict view_for_node(const StateDict& aggregated, const CompatibleSet& compat, NodeId node) {
  StateDict out(node, aggregated.round());
  for (const auto& [id, tensor] : aggregated.entries()) {
    auto it = compat.layers.find(id);
    if (it != compat.layers.end() && it->second.participants.count(node) != 0) out.insert(id, tensor);
  }
  return out;
}

}  // namespace fednnu
