// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0
//
// Conditioning strings keyed by echo view and cardiac phase. Two styles:
// plain natural-language templates, and templates whose concept words are
// replaced by run-stable randomized tokens.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace echosynth {

enum class View { two_chamber, four_chamber };
enum class Phase { ed, es };

struct ViewPhase {
    View view = View::two_chamber;
    Phase phase = Phase::ed;

    bool operator==(const ViewPhase&) const = default;
};

std::array<ViewPhase, 4> all_view_phases();

std::string to_string(View v);        // "2CH" / "4CH"
std::string to_string(Phase p);       // "ED" / "ES"
View view_from_string(const std::string& s);
Phase phase_from_string(const std::string& s);

enum class PromptStyle { textual, abstract };

std::string to_string(PromptStyle s);
PromptStyle prompt_style_from_string(const std::string& s);

struct Prompt {
    std::string text;
    PromptStyle style = PromptStyle::textual;
    ViewPhase view_phase;

    bool operator==(const Prompt&) const = default;
};

// Injective slot -> token mapping, deterministic for a seed, stable for the
// lifetime of a training run. Slot keys: "modality", "organ", "view:2CH",
// "view:4CH", "phase:ED", "phase:ES".
struct ConceptLexicon {
    std::uint64_t seed = 0;
    int token_length = 8;
    std::map<std::string, std::string> table;

    const std::string& token(const std::string& slot) const;
    std::uint64_t content_hash() const;
};

Prompt render_textual(ViewPhase vp);

ConceptLexicon build_lexicon(std::uint64_t seed, int token_length = 8);

Prompt render_abstract(ViewPhase vp, const ConceptLexicon& lex);

// Recovers (view, phase) from an abstract prompt; nullopt when the prompt
// does not contain exactly one view token and one phase token.
std::optional<ViewPhase> parse_abstract(const std::string& text, const ConceptLexicon& lex);

Prompt render_prompt(PromptStyle style, ViewPhase vp, const ConceptLexicon* lex);

void save_lexicon(const std::filesystem::path& path, const ConceptLexicon& lex);
ConceptLexicon load_lexicon(const std::filesystem::path& path);

}  // namespace echosynth
