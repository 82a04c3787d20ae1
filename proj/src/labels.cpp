#include <algorithm>
#include <set>

#include "cmt/volume.hpp"

namespace cmt {

LabelSchema LabelSchema::knee_default() {
  return LabelSchema({{kFemur, 1},
                      {kFemoralCartilage, 2},
                      {kTibia, 3},
                      {kTibialCartilage, 4},
                      {kMedialTibialCartilage, 5},
                      {kLateralTibialCartilage, 6}});
}

LabelSchema::LabelSchema(std::map<std::string, int> mapping) : mapping_(std::move(mapping)) {
  validate();
}

void LabelSchema::validate() const {
  std::set<int> seen;
  for (const auto& [name, v] : mapping_) {
    if (v <= 0 || v > 255) {
      throw Error(ErrorCode::InvalidArgument, "label '" + name + "' must be in [1,255]");
    }
    if (!seen.insert(v).second) {
      throw Error(ErrorCode::InvalidArgument, "label value " + std::to_string(v) + " used twice");
    }
  }
}

int LabelSchema::value(const std::string& name) const {
  const auto it = mapping_.find(name);
  if (it == mapping_.end()) throw Error(ErrorCode::UnknownLabel, "no label named '" + name + "'");
  return it->second;
}

std::optional<std::string> LabelSchema::name_of(int value) const {
  for (const auto& [name, v] : mapping_) {
    if (v == value) return name;
  }
  return std::nullopt;
}

void LabelSchema::set(const std::string& name, int value) {
  auto copy = mapping_;
  copy[name] = value;
  *this = LabelSchema(std::move(copy));
}

std::size_t LabelMap::count(std::uint8_t label) const {
  return static_cast<std::size_t>(std::count(values().begin(), values().end(), label));
}

std::vector<std::uint8_t> LabelMap::present_labels() const {
  std::array<bool, 256> seen{};
  for (auto v : values()) seen[v] = true;
  std::vector<std::uint8_t> out;
  for (int v = 1; v < 256; ++v) {
    if (seen[static_cast<std::size_t>(v)]) out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

LabelMap LabelMap::indicator(std::uint8_t label) const {
  std::vector<std::uint8_t> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = (*this)[i] == label ? 1 : 0;
  return LabelMap(grid(), std::move(out), schema_);
}

}  // namespace cmt
