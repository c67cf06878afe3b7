#include "fednnu/state_dict.hpp"

#include <algorithm>
#include <charconv>

#include "fednnu/error.hpp"
#include "fednnu/tensor_ops.hpp"

namespace fednnu {
namespace {

std::optional<LayerId::Kind> parse_kind(std::string_view s) {
  if (s == "weight") return LayerId::Kind::Weight;
  if (s == "bias") return LayerId::Kind::Bias;
  return std::nullopt;
}

}  // namespace

LayerId::LayerId(Part part, std::uint32_t stage, Kind kind) : part_(part), stage_(stage), kind_(kind) {
  if (part == Part::Head && stage != 0) throw UsageError("head layers carry no stage index");
}

std::optional<LayerId> LayerId::try_parse(std::string_view name) {
  if (name.starts_with("head.")) {
    auto kind = parse_kind(name.substr(5));
    if (!kind) return std::nullopt;
    return LayerId::head(*kind);
  }
  Part part;
  if (name.starts_with("enc.")) {
    part = Part::Encoder;
  } else if (name.starts_with("dec.")) {
    part = Part::Decoder;
  } else {
    return std::nullopt;
  }
  std::string_view rest = name.substr(4);
  const auto dot = rest.find('.');
  if (dot == std::string_view::npos || dot == 0) return std::nullopt;
  const std::string_view digits = rest.substr(0, dot);
  if (digits.size() > 1 && digits[0] == '0') return std::nullopt;
  std::uint32_t stage = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), stage);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) return std::nullopt;
  rest = rest.substr(dot + 1);
  if (!rest.starts_with("conv.")) return std::nullopt;
  auto kind = parse_kind(rest.substr(5));
  if (!kind) return std::nullopt;
  return LayerId(part, stage, *kind);
}

LayerId LayerId::parse(std::string_view name) {
  auto id = try_parse(name);
  if (!id) throw UsageError("invalid layer id '" + std::string(name) + "'");
  return *id;
}

std::string LayerId::str() const {
  const char* kind = kind_ == Kind::Weight ? "weight" : "bias";
  switch (part_) {
    case Part::Encoder:
      return "enc." + std::to_string(stage_) + ".conv." + kind;
    case Part::Decoder:
      return "dec." + std::to_string(stage_) + ".conv." + kind;
    case Part::Head:
      break;
  }
  return std::string("head.") + kind;
}

void StateDict::insert(LayerId id, Tensor tensor) {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), id,
                             [](const Entry& e, const LayerId& key) { return e.first < key; });
  if (it != entries_.end() && it->first == id) throw UsageError("duplicate layer id " + id.str());
  entries_.insert(it, Entry{id, std::move(tensor)});
}

void StateDict::assign(const LayerId& id, Tensor tensor) {
  Tensor* slot = find(id);
  if (slot == nullptr) throw UsageError("no layer " + id.str() + " to assign");
  *slot = std::move(tensor);
}

const Tensor* StateDict::find(const LayerId& id) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), id,
                             [](const Entry& e, const LayerId& key) { return e.first < key; });
  if (it == entries_.end() || !(it->first == id)) return nullptr;
  return &it->second;
}

Tensor* StateDict::find(const LayerId& id) {
  return const_cast<Tensor*>(static_cast<const StateDict*>(this)->find(id));
}

const Tensor& StateDict::at(const LayerId& id) const {
  const Tensor* t = find(id);
  if (t == nullptr) throw UsageError("no layer " + id.str());
  return *t;
}

std::vector<LayerId> StateDict::layer_ids() const {
  std::vector<LayerId> ids;
  ids.reserve(entries_.size());
  for (const auto& [id, _] : entries_) ids.push_back(id);
  return ids;
}

std::size_t StateDict::num_parameters() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

bool bit_equal(const StateDict& a, const StateDict& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a.entries()[i].first == b.entries()[i].first)) return false;
    if (!bit_equal(a.entries()[i].second, b.entries()[i].second)) return false;
  }
  return true;
}

}  // namespace fednnu
