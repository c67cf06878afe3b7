#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fednnu/tensor.hpp"

namespace fednnu {

using NodeId = std::uint32_t;

// Structural layer name: "enc.<stage>.conv.weight", "dec.<stage>.conv.bias",
// "head.weight", ... Models of different depth share names for the stages
// they have in common.
class LayerId {
 public:
  enum class Part : std::uint8_t { Encoder = 0, Decoder = 1, Head = 2 };
  enum class Kind : std::uint8_t { Weight = 0, Bias = 1 };

  LayerId() = default;
  LayerId(Part part, std::uint32_t stage, Kind kind);

  static LayerId encoder(std::uint32_t stage, Kind kind) { return {Part::Encoder, stage, kind}; }
  static LayerId decoder(std::uint32_t stage, Kind kind) { return {Part::Decoder, stage, kind}; }
  static LayerId head(Kind kind) { return {Part::Head, 0, kind}; }

  // Throws UsageError for names outside the grammar.
  static LayerId parse(std::string_view name);
  static std::optional<LayerId> try_parse(std::string_view name);

  Part part() const { return part_; }
  std::uint32_t stage() const { return stage_; }
  Kind kind() const { return kind_; }

  std::string str() const;

  // Canonical order: enc < dec < head, then stage, then weight < bias.
  friend auto operator<=>(const LayerId&, const LayerId&) = default;

 private:
  Part part_ = Part::Encoder;
  std::uint32_t stage_ = 0;
  Kind kind_ = Kind::Weight;
};

// Layer-id -> parameter tensor mapping, kept sorted in canonical LayerId order.
class StateDict {
 public:
  using Entry = std::pair<LayerId, Tensor>;

  StateDict() = default;
  StateDict(NodeId node_id, std::uint32_t round) : node_id_(node_id), round_(round) {}

  // Inserts keeping canonical order; throws UsageError on a duplicate id.
  void insert(LayerId id, Tensor tensor);
  // Replaces an existing entry's tensor; throws UsageError if absent.
  void assign(const LayerId& id, Tensor tensor);

  const Tensor* find(const LayerId& id) const;
  Tensor* find(const LayerId& id);
  const Tensor& at(const LayerId& id) const;
  bool contains(const LayerId& id) const { return find(id) != nullptr; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::vector<LayerId> layer_ids() const;
  std::size_t num_parameters() const;

  NodeId node_id() const { return node_id_; }
  std::uint32_t round() const { return round_; }
  void set_node_id(NodeId id) { node_id_ = id; }
  void set_round(std::uint32_t round) { round_ = round; }

  friend bool operator==(const StateDict& a, const StateDict& b) {
    return a.node_id_ == b.node_id_ && a.round_ == b.round_ && a.entries_ == b.entries_;
  }

 private:
  std::vector<Entry> entries_;
  NodeId node_id_ = 0;
  std::uint32_t round_ = 0;
};

// Entries (ids, dims, value bits) identical; ignores node_id and round.
bool bit_equal(const StateDict& a, const StateDict& b);

}  // namespace fednnu
