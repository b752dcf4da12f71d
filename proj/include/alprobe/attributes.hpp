#ifndef ALPROBE_ATTRIBUTES_HPP
#define ALPROBE_ATTRIBUTES_HPP

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace alprobe {

// Canonical attribute order. All matrices, serialized vectors and CSV
// columns follow this order.
enum class AttributeId : int {
  GeneralToxicity = 0,
  Profanity = 1,
  Insult = 2,
  SexuallyExplicit = 3,
  IdentityAttack = 4,
  Threat = 5,
};

inline constexpr std::size_t kNumAttributes = 6;

inline constexpr std::array<AttributeId, kNumAttributes> kAllAttributes = {
    AttributeId::GeneralToxicity, AttributeId::Profanity,
    AttributeId::Insult,          AttributeId::SexuallyExplicit,
    AttributeId::IdentityAttack,  AttributeId::Threat};

std::string_view attribute_key(AttributeId a);     // snake_case file key
std::string_view attribute_label(AttributeId a);   // human label
std::string_view attribute_remote_name(AttributeId a);  // service vocabulary
AttributeId attribute_from_key(std::string_view key);

// Six scores in [0,1], one per attribute in canonical order.
class ToxicityVector {
 public:
  ToxicityVector() : scores_{} {}
  explicit ToxicityVector(const std::array<double, kNumAttributes>& scores);

  double operator[](AttributeId a) const {
    return scores_[static_cast<std::size_t>(a)];
  }
  void set(AttributeId a, double value);

  const std::array<double, kNumAttributes>& scores() const { return scores_; }

  friend bool operator==(const ToxicityVector&, const ToxicityVector&) = default;

 private:
  std::array<double, kNumAttributes> scores_;
};

}  // namespace alprobe

#endif  // ALPROBE_ATTRIBUTES_HPP
