#include "cacophony/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <stdexcept>

namespace cacophony {

Vocab::Vocab() {
    tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
    for (int i = 0; i < 4; ++i) ids_[tokens_[static_cast<size_t>(i)]] = i;
}

int Vocab::id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? UNK : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) throw std::invalid_argument("Vocab::token: id out of range");
    return tokens_[static_cast<size_t>(id)];
}

void Vocab::add_token(const std::string& token) {
    if (ids_.count(token)) return;
    ids_[token] = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
}

void Vocab::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("Vocab::save: cannot open " + path);
    for (size_t i = 4; i < tokens_.size(); ++i) f << tokens_[i] << "\n";
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("Vocab::load: cannot open " + path);
    Vocab v;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) v.add_token(line);
    }
    return v;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) {
                words.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

Vocab build_vocab(const std::vector<std::string>& corpus, const std::vector<std::string>& extra_tokens) {
    if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
    std::set<std::string> unique;  // sorted for deterministic id assignment
    for (const auto& caption : corpus)
        for (const auto& w : split_words(caption)) unique.insert(w);
    for (const auto& extra : extra_tokens)
        for (const auto& w : split_words(extra)) unique.insert(w);
    Vocab v;
    for (const auto& w : unique) v.add_token(w);
    return v;
}

TokenSequence tokenize(const std::string& text, const Vocab& vocab, int max_len) {
    if (max_len < 2) throw std::invalid_argument("tokenize: max_len must fit BOS and EOS");
    TokenSequence seq;
    seq.ids.push_back(Vocab::BOS);
    for (const auto& w : split_words(text)) {
        if (static_cast<int>(seq.ids.size()) >= max_len - 1) break;  // leave room for EOS
        seq.ids.push_back(vocab.id(w));
    }
    seq.ids.push_back(Vocab::EOS);
    seq.pad_mask.assign(seq.ids.size(), 0);
    return seq;
}

std::string detokenize(const TokenSequence& seq, const Vocab& vocab) {
    std::string out;
    for (int id : seq.ids) {
        if (id == Vocab::BOS || id == Vocab::PAD) continue;
        if (id == Vocab::EOS) break;
        if (!out.empty()) out.push_back(' ');
        out += vocab.token(id);
    }
    return out;
}

std::string apply_prompt_template(const std::string& label, const std::string& templ) {
    const std::string placeholder = "[label]";
    const size_t pos = templ.find(placeholder);
    if (pos == std::string::npos)
        throw std::invalid_argument("apply_prompt_template: template is missing the [label] placeholder");
    std::string out = templ;
    out.replace(pos, placeholder.size(), label);
    return out;
}

}  // namespace cacophony
