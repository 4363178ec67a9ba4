#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace cacophony {

constexpr int kMaxTextLen = 77;

// Word-level vocabulary with fixed special ids. Stands in for a pretrained
// subword tokenizer; the synthetic caption grammar is a closed set of words.
class Vocab {
public:
    static constexpr int PAD = 0;
    static constexpr int BOS = 1;
    static constexpr int EOS = 2;
    static constexpr int UNK = 3;

    Vocab();

    int id(const std::string& token) const;  // UNK for out-of-vocabulary
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(tokens_.size()); }

    void add_token(const std::string& token);

    // One token per line, line number = id - 4.
    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

// Lowercased whitespace tokens, sorted lexicographically, ids after the 4
// reserved ids. extra_tokens join the corpus words (used to make zero-shot
// prompt templates in-vocabulary).
Vocab build_vocab(const std::vector<std::string>& corpus, const std::vector<std::string>& extra_tokens = {});

struct TokenSequence {
    std::vector<int> ids;           // BOS ... EOS [PAD ...]
    std::vector<uint8_t> pad_mask;  // 1 where PAD

    int length() const { return static_cast<int>(ids.size()); }
};

std::vector<std::string> split_words(const std::string& text);

// BOS + ids + EOS truncated so the total length never exceeds max_len, with
// EOS always last (interior tokens are dropped first).
TokenSequence tokenize(const std::string& text, const Vocab& vocab, int max_len = kMaxTextLen);

std::string detokenize(const TokenSequence& seq, const Vocab& vocab);

// Replaces the literal "[label]" placeholder.
std::string apply_prompt_template(const std::string& label, const std::string& templ);

}  // namespace cacophony
