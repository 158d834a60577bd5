// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#include "echosynth/prompts.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "echosynth/errors.hpp"
#include "echosynth/hashing.hpp"
#include "echosynth/rng.hpp"

namespace echosynth {

std::array<ViewPhase, 4> all_view_phases() {
    return {ViewPhase{View::two_chamber, Phase::ed}, ViewPhase{View::two_chamber, Phase::es},
            ViewPhase{View::four_chamber, Phase::ed}, ViewPhase{View::four_chamber, Phase::es}};
}

std::string to_string(View v) { return v == View::two_chamber ? "2CH" : "4CH"; }
std::string to_string(Phase p) { return p == Phase::ed ? "ED" : "ES"; }

View view_from_string(const std::string& s) {
    if (s == "2CH") return View::two_chamber;
    if (s == "4CH") return View::four_chamber;
    throw ConfigError("unknown view '" + s + "'");
}

Phase phase_from_string(const std::string& s) {
    if (s == "ED") return Phase::ed;
    if (s == "ES") return Phase::es;
    throw ConfigError("unknown phase '" + s + "'");
}

std::string to_string(PromptStyle s) {
    return s == PromptStyle::textual ? "textual" : "abstract";
}

PromptStyle prompt_style_from_string(const std::string& s) {
    if (s == "textual") return PromptStyle::textual;
    if (s == "abstract") return PromptStyle::abstract;
    throw ConfigError("unknown prompt style '" + s + "'");
}

const std::string& ConceptLexicon::token(const std::string& slot) const {
    const auto it = table.find(slot);
    if (it == table.end()) {
        throw LexiconError("lexicon is missing slot '" + slot + "'");
    }
    return it->second;
}

std::uint64_t ConceptLexicon::content_hash() const {
    std::ostringstream os;
    os << seed << "|" << token_length;
    for (const auto& [k, v] : table) {
        os << "|" << k << "=" << v;
    }
    return fnv1a64(os.str());
}

Prompt render_textual(ViewPhase vp) {
    const std::string view_word = vp.view == View::two_chamber ? "2-chamber" : "4-chamber";
    Prompt p;
    p.style = PromptStyle::textual;
    p.view_phase = vp;
    p.text = "ultrasound image of the heart in " + view_word + " view in the " +
             to_string(vp.phase) + " phase";
    return p;
}

namespace {

const std::vector<std::string>& lexicon_slots() {
    static const std::vector<std::string> slots = {"modality", "organ",    "view:2CH",
                                                   "view:4CH", "phase:ED", "phase:ES"};
    return slots;
}

// Concept words that must never leak into an abstract prompt.
const std::set<std::string>& concealed_words() {
    static const std::set<std::string> words = {"ultrasound", "image", "heart",
                                                "two-chamber", "four-chamber", "2-chamber",
                                                "4-chamber", "ed", "es", "chamber"};
    return words;
}

std::string random_token(Rng& rng, int length) {
    static const char alphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789";
    std::string out;
    out.reserve(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) {
        out.push_back(alphabet[rng.uniform_int(36)]);
    }
    return out;
}

}  // namespace

ConceptLexicon build_lexicon(std::uint64_t seed, int token_length) {
    if (token_length < 4) {
        throw ParameterError("token_length = " + std::to_string(token_length) + " must be >= 4");
    }
    ConceptLexicon lex;
    lex.seed = seed;
    lex.token_length = token_length;
    Rng rng(seed);
    std::set<std::string> used;
    for (const auto& slot : lexicon_slots()) {
        std::string tok;
        bool ok = false;
        for (int attempt = 0; attempt < 1000; ++attempt) {
            tok = random_token(rng, token_length);
            if (!used.contains(tok) && !concealed_words().contains(tok)) {
                ok = true;
                break;
            }
        }
        if (!ok) {
            throw Error("lexicon token collision persisted past retry bound");
        }
        used.insert(tok);
        lex.table[slot] = tok;
    }
    return lex;
}

Prompt render_abstract(ViewPhase vp, const ConceptLexicon& lex) {
    const std::string view_slot = std::string("view:") + to_string(vp.view);
    const std::string phase_slot = std::string("phase:") + to_string(vp.phase);
    Prompt p;
    p.style = PromptStyle::abstract;
    p.view_phase = vp;
    p.text = lex.token("modality") + " displays the " + lex.token("organ") + " in a " +
             lex.token(view_slot) + " view during the " + lex.token(phase_slot) + " phase";
    return p;
}

std::optional<ViewPhase> parse_abstract(const std::string& text, const ConceptLexicon& lex) {
    std::istringstream is(text);
    std::optional<View> view;
    std::optional<Phase> phase;
    std::string word;
    while (is >> word) {
        for (const auto& [slot, tok] : lex.table) {
            if (word != tok) continue;
            if (slot == "view:2CH") view = View::two_chamber;
            if (slot == "view:4CH") view = View::four_chamber;
            if (slot == "phase:ED") phase = Phase::ed;
            if (slot == "phase:ES") phase = Phase::es;
        }
    }
    if (!view || !phase) return std::nullopt;
    return ViewPhase{*view, *phase};
}

Prompt render_prompt(PromptStyle style, ViewPhase vp, const ConceptLexicon* lex) {
    if (style == PromptStyle::textual) {
        return render_textual(vp);
    }
    if (lex == nullptr) {
        throw LexiconError("abstract prompts require a lexicon");
    }
    return render_abstract(vp, *lex);
}

void save_lexicon(const std::filesystem::path& path, const ConceptLexicon& lex) {
    nlohmann::json j;
    j["seed"] = lex.seed;
    j["token_length"] = lex.token_length;
    j["table"] = lex.table;
    j["hash"] = hash_hex(lex.content_hash());
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write lexicon to " + path.string());
    }
    out << j.dump(2) << "\n";
}

ConceptLexicon load_lexicon(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot read lexicon from " + path.string());
    }
    nlohmann::json j = nlohmann::json::parse(in);
    ConceptLexicon lex;
    lex.seed = j.at("seed").get<std::uint64_t>();
    lex.token_length = j.at("token_length").get<int>();
    lex.table = j.at("table").get<std::map<std::string, std::string>>();
    if (j.contains("hash") && j.at("hash").get<std::string>() != hash_hex(lex.content_hash())) {
        throw IntegrityError("lexicon content does not match its recorded hash: " + path.string());
    }
    return lex;
}

}  // namespace echosynth
