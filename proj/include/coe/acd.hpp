#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "coe/error.hpp"
#include "coe/llm_gateway.hpp"
#include "coe/manifest.hpp"

namespace coe {

// A short linguistic concept description: lowercase, single-spaced, at most
// three words, no surrounding punctuation. Only normalize_atom() and
// Atom::from_normalized() create one.
class Atom {
 public:
  // Wraps text that is already in normal form; throws ParseError otherwise.
  static Atom from_normalized(std::string text);

  const std::string& text() const { return text_; }
  auto operator<=>(const Atom&) const = default;

 private:
  explicit Atom(std::string text) : text_(std::move(text)) {}
  friend Atom normalize_atom(std::string_view raw);
  std::string text_;
};

inline constexpr std::size_t kMaxAtomWords = 3;

// Lowercases, trims, collapses inner whitespace, strips surrounding
// punctuation and keeps the first three words. Throws ParseError when
// nothing is left.
Atom normalize_atom(std::string_view raw);

struct PatchAtoms {
  std::size_t patch_index = 0;
  std::vector<Atom> atoms;  // exactly Q after repair
};

// Per-patch atoms and slot frequencies for one concept. unique_atoms keeps
// first-occurrence order (patch order, then slot order); counts[i] belongs
// to unique_atoms[i].
struct RawAtomTable {
  std::vector<PatchAtoms> per_patch;
  std::vector<Atom> unique_atoms;
  std::vector<std::size_t> counts;

  std::size_t p() const { return unique_atoms.size(); }
  std::size_t total() const;
  std::size_t frequency(const Atom& a) const;
};

RawAtomTable tally(std::vector<PatchAtoms> per_patch);

// Builds a table straight from (atom, count) pairs, for callers that have
// no per-patch breakdown (tests, imported catalogs).
RawAtomTable table_from_counts(const std::vector<std::pair<std::string, std::size_t>>& counts);

struct DescribeOptions {
  std::size_t q = 3;
  std::string model_tag = "describer";
  double temperature = 0.0;
  int max_output = 2048;
};

std::vector<ImagePart> load_patch_images(const ConceptManifest& manifest, const VisualConcept& vc);

ChatRequest render_describe_prompt(const VisualConcept& vc, const std::vector<ImagePart>& patches,
                                   const DescribeOptions& options);

// Raised when the response omits some image indices; `missing` is 0-based.
class MissingPatchesError : public ParseError {
 public:
  MissingPatchesError(std::vector<std::size_t> missing, const std::string& msg)
      : ParseError(msg), missing(std::move(missing)) {}
  std::vector<std::size_t> missing;
};

struct ParsedAtoms {
  std::vector<PatchAtoms> per_patch;
  std::vector<std::string> warnings;
};

// Parses a JSON object keyed by 1-based image index. Short atom lists are
// padded with the patch's first atom, long ones truncated to q.
ParsedAtoms parse_atoms(std::string_view response_text, std::size_t n, std::size_t q);

struct DescribeResult {
  RawAtomTable table;
  std::vector<std::string> warnings;
};

// render -> complete -> parse -> tally. Missing patch keys trigger exactly
// one re-query.
DescribeResult describe_concept(const VisualConcept& vc, const std::vector<ImagePart>& patches, Gateway& gateway,
                                const DescribeOptions& options);

}  // namespace coe
