#pragma once

#include <map>
#include <set>
#include <span>
#include <vector>

#include "fednnu/state_dict.hpp"

namespace fednnu {

enum class MatchMode {
  // Layer must be present with identical dims in every node.
  Strict,
  // Layer must be present with identical dims in at least two nodes; only
  // those nodes participate in its mean.
  Subset,
};

const char* to_string(MatchMode mode);
MatchMode match_mode_from_string(std::string_view s);

// Output of the layer-matching function.
struct CompatibleSet {
  struct Layer {
    Shape dims;
    std::set<NodeId> participants;
  };
  std::map<LayerId, Layer> layers;

  bool contains(const LayerId& id) const { return layers.count(id) != 0; }
  std::size_t size() const { return layers.size(); }
  bool empty() const { return layers.empty(); }
  std::vector<LayerId> ids() const;
};

// Requires unique node ids across dicts.
CompatibleSet match_layers(std::span<const StateDict> dicts, MatchMode mode = MatchMode::Strict);

struct AggregationOptions {
  // Weight each participant by weights[node_id] instead of 1/|K_l|.
  bool weighted = false;
  std::map<NodeId, double> weights;
};

// Per compatible layer, the mean over its participants, summed in ascending
// node id order. Output holds exactly the compatible layers.
StateDict aggregate_asym(std::span<const StateDict> dicts, const CompatibleSet& compat,
                         const AggregationOptions& options = {});

// Overwrites local layers present in `aggregated`, keeps the rest, and
// advances the round. Aggregated layers the local model lacks are ignored.
StateDict apply_update(const StateDict& local, const StateDict& aggregated);

// Restriction of an aggregate to the layers whose participant set includes
// `node`; this is what the coordinator sends to that node.
StateDict view_for_node(const StateDict& aggregated, const CompatibleSet& compat, NodeId node);

}  // namespace fednnu
