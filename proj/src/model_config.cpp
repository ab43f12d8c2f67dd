#include "mtpslab/model_config.hpp"

#include "json.hpp"

namespace mtpslab {

using nlohmann::json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::ntp: return "ntp";
    case Variant::group_linear: return "group_linear";
    case Variant::group_trans: return "group_trans";
    case Variant::mtp_parallel: return "mtp_parallel";
    case Variant::mtp_deepseek: return "mtp_deepseek";
    case Variant::mtp_vocalnet: return "mtp_vocalnet";
  }
  return "ntp";
}

Variant variant_from_string(const std::string& s) {
  if (s == "ntp") return Variant::ntp;
  if (s == "group_linear") return Variant::group_linear;
  if (s == "group_trans") return Variant::group_trans;
  if (s == "mtp_parallel") return Variant::mtp_parallel;
  if (s == "mtp_deepseek") return Variant::mtp_deepseek;
  if (s == "mtp_vocalnet") return Variant::mtp_vocalnet;
  throw ConfigError("unknown variant '" + s + "'");
}

std::string to_string(PosEncoding p) {
  return p == PosEncoding::rotary ? "rotary" : "sinusoidal";
}

std::string to_string(DtypeTag d) { return d == DtypeTag::f32 ? "f32" : "f64"; }

DtypeTag dtype_from_string(const std::string& s) {
  if (s == "f32") return DtypeTag::f32;
  if (s == "f64") return DtypeTag::f64;
  throw ConfigError("unknown dtype '" + s + "'");
}

void ModelConfig::validate() const {
  if (n < 1) throw ConfigError("config: n must be >= 1");
  if (lambda <= 0.0 || lambda >= 1.0) {
    throw ConfigError("config: lambda must lie in (0, 1)");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("config: d_model must be divisible by n_heads");
  }
  if ((d_model / n_heads) % 2 != 0) {
    throw ConfigError("config: head dim must be even for rotary encoding");
  }
  if (v_speech < 4 || v_text < 3) {
    throw ConfigError("config: vocabularies too small for the special tokens");
  }
  if (mask_mode_mix < 0.0 || mask_mode_mix > 1.0) {
    throw ConfigError("config: mask_mode_mix must lie in [0, 1]");
  }
  if (cs < 1 || ct < 1) throw ConfigError("config: C_s and C_t must be >= 1");
  if (n_backbone_layers < 1 || n_projector_layers < 1 || d_ff < 1) {
    throw ConfigError("config: layer sizes must be >= 1");
  }
}

std::string ModelConfig::to_json() const {
  json j;
  j["cs"] = cs;
  j["ct"] = ct;
  j["d_ff"] = d_ff;
  j["d_model"] = d_model;
  j["dtype"] = to_string(dtype);
  j["lambda"] = lambda;
  j["mask_mode_mix"] = mask_mode_mix;
  j["n"] = n;
  j["n_backbone_layers"] = n_backbone_layers;
  j["n_heads"] = n_heads;
  j["n_projector_layers"] = n_projector_layers;
  j["pos_encoding"] = to_string(pos_encoding);
  j["v_speech"] = v_speech;
  j["v_text"] = v_text;
  j["variant"] = to_string(variant);
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig c;
  c.cs = j.at("cs").get<int>();
  c.ct = j.at("ct").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.dtype = dtype_from_string(j.at("dtype").get<std::string>());
  c.lambda = j.at("lambda").get<double>();
  c.mask_mode_mix = j.at("mask_mode_mix").get<double>();
  c.n = j.at("n").get<int>();
  c.n_backbone_layers = j.at("n_backbone_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_projector_layers = j.at("n_projector_layers").get<int>();
  c.pos_encoding = j.at("pos_encoding").get<std::string>() == "sinusoidal"
                       ? PosEncoding::sinusoidal
                       : PosEncoding::rotary;
  c.v_speech = j.at("v_speech").get<int>();
  c.v_text = j.at("v_text").get<int>();
  c.variant = variant_from_string(j.at("variant").get<std::string>());
  c.validate();
  return c;
}

}  // namespace mtpslab
