#include "alprobe/attributes.hpp"

#include <cmath>

namespace alprobe {

namespace {
constexpr std::array<std::string_view, kNumAttributes> kKeys = {
    "general_toxicity", "profanity", "insult",
    "sexually_explicit", "identity_attack", "threat"};
constexpr std::array<std::string_view, kNumAttributes> kLabels = {
    "General Toxicity", "Profanity", "Insult",
    "Sexually Explicit", "Identity Attack", "Threat"};
constexpr std::array<std::string_view, kNumAttributes> kRemoteNames = {
    "TOXICITY", "PROFANITY", "INSULT",
    "SEXUALLY_EXPLICIT", "IDENTITY_ATTACK", "THREAT"};
}  // namespace

std::string_view attribute_key(AttributeId a) {
  return kKeys[static_cast<std::size_t>(a)];
}

std::string_view attribute_label(AttributeId a) {
  return kLabels[static_cast<std::size_t>(a)];
}

std::string_view attribute_remote_name(AttributeId a) {
  return kRemoteNames[static_cast<std::size_t>(a)];
}

AttributeId attribute_from_key(std::string_view key) {
  for (std::size_t i = 0; i < kNumAttributes; ++i) {
    if (kKeys[i] == key) return static_cast<AttributeId>(i);
  }
  throw std::invalid_argument("unknown attribute key: " + std::string(key));
}

ToxicityVector::ToxicityVector(const std::array<double, kNumAttributes>& scores)
    : scores_(scores) {
  for (std::size_t i = 0; i < kNumAttributes; ++i) {
    if (!std::isfinite(scores_[i]) || scores_[i] < 0.0 || scores_[i] > 1.0) {
      throw std::invalid_argument(
          "toxicity score out of range for " + std::string(kKeys[i]) + ": " +
          std::to_string(scores_[i]));
    }
  }
}

void ToxicityVector::set(AttributeId a, double value) {
  if (!std::isfinite(value) || value < 0.0 || value > 1.0) {
    throw std::invalid_argument("toxicity score out of range: " +
                                std::to_string(value));
  }
  scores_[static_cast<std::size_t>(a)] = value;
}

}  // namespace alprobe
