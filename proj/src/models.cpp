#include "cyclesing/models.hpp"

namespace cyclesing {

const std::vector<VariantSpec>& variant_registry() {
  static const std::vector<VariantSpec> reg = {
      {"m1", false, false, false, 16, 2},
      {"m2", false, true, false, 16, 2},
      {"m3", true, false, false, 16, 2},
      {"m4", true, true, false, 16, 2},
      {"m5", true, true, true, 16, 2},
  };
  return reg;
}

VariantSpec find_variant(const std::string& name) {
  for (const VariantSpec& v : variant_registry())
    if (v.name == name) return v;
  fail(Err::UnknownVariant, "unknown variant '" + name + "' (want m1..m5)");
}

std::string variant_summary(const VariantSpec& spec) {
  Generator<float> gen("g", generator_config<float>(spec));
  Discriminator<float> disc(
      "d", generator_config<float>(spec),
      spec.began ? Discriminator<float>::Kind::AutoEncoder : Discriminator<float>::Kind::Patch);
  std::string out = spec.name + " began=" + (spec.began ? "yes" : "no") +
                    " skip=" + (spec.skip ? "yes" : "no") +
                    " recurrent=" + (spec.recurrent ? "yes" : "no") +
                    " base=" + std::to_string(spec.base_channels) +
                    " depth=" + std::to_string(spec.depth) + "\n";
  out += "generator:\n";
  for (const auto& l : gen.layer_shapes()) out += "  " + l + "\n";
  out += spec.began ? "discriminator (auto-encoder):\n" : "discriminator (patch):\n";
  for (const auto& l : disc.layer_shapes()) out += "  " + l + "\n";
  return out;
}

}  // namespace cyclesing
