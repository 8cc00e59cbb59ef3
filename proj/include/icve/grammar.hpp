// Copyright (c) 2026 ICVE Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "icve/rng.hpp"
#include "icve/worldgen.hpp"

namespace icve::grammar {

using worldgen::EditOp;
using worldgen::GroundTruth;
using worldgen::SceneSpec;
using worldgen::ShapeKind;
using worldgen::Style;

inline constexpr const char* kNoEdit = "NO_EDIT";
inline constexpr int kMaxInstructionTokens = 16;

// Canonical operation classes an instruction can describe. `move` arises
// only from clip-pair differences; scene edits use the other six.
enum class OpClass { add, remove, replace, recolor, resize, style, move, no_edit };

std::string op_class_name(OpClass c);

struct ParsedInstruction {
  OpClass op = OpClass::no_edit;
  std::string verb;         // surface verb as written
  std::string color, kind;  // referent of the target
  std::string color2, kind2;  // replace payload / recolor target color
  std::string region;       // add target cell / move destination
  std::string direction;    // sub-cell move: leftwards/rightwards/upwards/downwards
  std::string size_word;    // bigger | smaller
  std::string style;        // grayscale | sepia | invert

  // Equality of everything except the surface verb.
  bool canonically_equals(const ParsedInstruction& o) const;
};

// --- vocabulary --------------------------------------------------------------

int vocab_size();
int pad_id();
const std::vector<std::string>& vocabulary();
int token_id(const std::string& word);

// Whitespace tokenization over the closed vocabulary, padded to
// kMaxInstructionTokens with PAD. Unknown word or overflow throws.
std::vector<int> tokenize(const std::string& instruction);

// --- parsing and generation ---------------------------------------------------

ParsedInstruction parse(const std::string& instruction);
bool parses(const std::string& instruction);

// One sentence for the single most significant difference between two
// ground truths (priority add > remove > replace > recolor > resize >
// style > motion), or NO_EDIT. Also returns the edit-type tag.
std::pair<std::string, std::string> describe_diff(const GroundTruth& a, const GroundTruth& b);

// Canonical sentence for a scene edit (the inverse of parse for the worlds
// produced by the canonical edit generator).
std::string instruction_for_edit(const SceneSpec& scene, const EditOp& edit, int h, int w);

// Reconstructs the canonical edit from an instruction against a scene.
// Requires a unique (color, kind) referent; move instructions are rejected.
EditOp edit_from_instruction(const SceneSpec& scene, const ParsedInstruction& parsed, int h, int w);

// Leading-verb synonym rewrite; the rest of the sentence is preserved.
std::string augment_instruction(const std::string& instruction, Rng& rng);

// Rejects instructions touching the blocklist of meaningless photometric
// tweaks (brightness, contrast, ...), case-insensitively.
bool filter_trivial_accepts(const std::string& instruction);

// Canonical resize factors named by the grammar.
double size_factor_for_word(const std::string& word);

// 3x3 named grid cell of a point.
std::string region_name(float cx, float cy, int h, int w);
std::pair<int, int> region_cell(const std::string& name);  // (row, col)

}  // namespace icve::grammar
