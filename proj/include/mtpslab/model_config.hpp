#pragma once

#include <string>

#include "mtpslab/errors.hpp"

namespace mtpslab {

enum class Variant {
  ntp,
  group_linear,
  group_trans,
  mtp_parallel,
  mtp_deepseek,
  mtp_vocalnet,
};

enum class PosEncoding { rotary, sinusoidal };

enum class DtypeTag { f32, f64 };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
std::string to_string(PosEncoding p);
std::string to_string(DtypeTag d);
DtypeTag dtype_from_string(const std::string& s);

struct ModelConfig {
  int v_speech = 99;  // incl. SOS/EOS/PAD (core vocab + 3)
  int v_text = 18;    // incl. BOS/PAD (alphabet + 2)
  int d_model = 64;
  int n_heads = 4;
  int n_backbone_layers = 4;
  int n_projector_layers = 2;
  int d_ff = 256;
  Variant variant = Variant::ntp;
  /// Tokens predicted per step for the MTP variants ("Module Num"), or the
  /// group size g for the group variants; 1 for ntp.
  int n = 1;
  double lambda = 0.5;
  double mask_mode_mix = 0.5;
  int cs = 15;
  int ct = 5;
  PosEncoding pos_encoding = PosEncoding::rotary;
  DtypeTag dtype = DtypeTag::f32;

  // Special token ids (fixed tail positions of each vocab).
  int sos_id() const { return v_speech - 3; }
  int eos_id() const { return v_speech - 2; }
  int speech_pad_id() const { return v_speech - 1; }
  int bos_id() const { return v_text - 2; }
  int text_pad_id() const { return v_text - 1; }

  bool is_group() const {
    return variant == Variant::group_linear || variant == Variant::group_trans;
  }
  bool is_mtp() const {
    return variant == Variant::mtp_parallel ||
           variant == Variant::mtp_deepseek ||
           variant == Variant::mtp_vocalnet;
  }
  int group_size() const { return n; }

  void validate() const;

  /// Canonical JSON (sorted keys); the checkpoint stores exactly this text.
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

}  // namespace mtpslab
