#include <algorithm>
#include <map>
#include <sstream>

#include "rankedit/encoder.hpp"
#include "rankedit/error.hpp"
#include "rankedit/io.hpp"

namespace rankedit {

namespace {

constexpr std::string_view kHeaderTag = "#vocab";

std::int32_t parse_special(const std::string& field, std::string_view key,
                           const std::string& origin) {
  const std::string prefix = std::string(key) + "=";
  if (field.rfind(prefix, 0) != 0) {
    throw DataError(origin + ": header field '" + field + "' should start with '" +
                    prefix + "'");
  }
  try {
    std::size_t used = 0;
    const int value = std::stoi(field.substr(prefix.size()), &used);
    if (used != field.size() - prefix.size()) throw std::invalid_argument(field);
    return value;
  } catch (const std::exception&) {
    throw DataError(origin + ": bad special id in '" + field + "'");
  }
}

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

Vocabulary Vocabulary::with_specials(const std::vector<std::string>& words) {
  Vocabulary v;
  v.tokens_ = {std::string(kBos), std::string(kEos), std::string(kUnk), std::string(kPad)};
  v.tokens_.insert(v.tokens_.end(), words.begin(), words.end());
  v.bos_ = 0;
  v.eos_ = 1;
  v.unk_ = 2;
  v.pad_ = 3;
  v.index_and_validate("vocabulary");
  return v;
}

Vocabulary Vocabulary::build_from_corpus(std::span<const std::string> lines,
                                         std::size_t max_words) {
  std::map<std::string, std::size_t> counts;
  for (const auto& line : lines) {
    for (auto& word : split_words(line)) ++counts[word];
  }
  for (auto special : {kBos, kEos, kUnk, kPad}) counts.erase(std::string(special));
  if (counts.empty()) {
    throw DataError("corpus contains no tokens");
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (std::size_t i = 0; i < ranked.size() && i < max_words; ++i) {
    words.push_back(ranked[i].first);
  }
  return with_specials(words);
}

Vocabulary Vocabulary::parse(std::string_view text, const std::string& origin) {
  std::istringstream in{std::string(text)};
  std::string header;
  if (!std::getline(in, header)) {
    throw DataError(origin + ": empty vocabulary file");
  }
  std::istringstream fields(header);
  std::string tag, bos, eos, unk, pad;
  fields >> tag >> bos >> eos >> unk >> pad;
  if (tag != kHeaderTag) {
    throw DataError(origin + ": first line must be '#vocab bos=.. eos=.. unk=.. pad=..'");
  }
  Vocabulary v;
  v.bos_ = parse_special(bos, "bos", origin);
  v.eos_ = parse_special(eos, "eos", origin);
  v.unk_ = parse_special(unk, "unk", origin);
  v.pad_ = parse_special(pad, "pad", origin);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    v.tokens_.push_back(line);
  }
  v.index_and_validate(origin);
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  return parse(read_text_file(path), path.string());
}

std::string Vocabulary::serialize() const {
  std::string out = std::string(kHeaderTag) + " bos=" + std::to_string(bos_) +
                    " eos=" + std::to_string(eos_) + " unk=" + std::to_string(unk_) +
                    " pad=" + std::to_string(pad_) + "\n";
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  write_text_file(path, serialize());
}

std::string Vocabulary::digest() const { return sha256_hex(serialize()); }

void Vocabulary::index_and_validate(const std::string& origin) {
  ids_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto& t = tokens_[i];
    if (t.empty() || std::any_of(t.begin(), t.end(), [](char c) {
          return std::isspace(static_cast<unsigned char>(c));
        })) {
      throw DataError(origin + ": token on line " + std::to_string(i + 2) +
                      " is empty or contains whitespace");
    }
    if (!ids_.emplace(t, static_cast<std::int32_t>(i)).second) {
      throw DataError(origin + ": duplicate token '" + t + "'");
    }
  }
  const auto n = static_cast<std::int32_t>(tokens_.size());
  const std::int32_t specials[] = {bos_, eos_, unk_, pad_};
  for (std::int32_t id : specials) {
    if (id < 0 || id >= n) {
      throw DataError(origin + ": special id " + std::to_string(id) + " out of range");
    }
  }
  for (int a = 0; a < 4; ++a) {
    for (int b = a + 1; b < 4; ++b) {
      if (specials[a] == specials[b]) {
        throw DataError(origin + ": special ids must be distinct");
      }
    }
  }
}

std::optional<std::int32_t> Vocabulary::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::int32_t Vocabulary::id_or_unk(std::string_view token) const {
  return find(token).value_or(unk_);
}

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::is_special(std::int32_t id) const {
  return id == bos_ || id == eos_ || id == unk_ || id == pad_;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab,
                       std::size_t max_seq_len) {
  const auto words = split_words(text);
  if (words.empty()) {
    throw DataError("cannot tokenize empty text");
  }
  if (words.size() + 2 > max_seq_len) {
    throw DataError("'" + std::string(text) + "' tokenizes to " +
                    std::to_string(words.size() + 2) + " tokens, above max_seq_len " +
                    std::to_string(max_seq_len));
  }
  TokenSequence seq;
  seq.text = std::string(text);
  seq.ids.reserve(words.size() + 2);
  seq.ids.push_back(vocab.bos());
  for (const auto& w : words) seq.ids.push_back(vocab.id_or_unk(w));
  seq.ids.push_back(vocab.eos());
  return seq;
}

TokenSpan locate_subject(const TokenSequence& seq, std::string_view subject,
                         const Vocabulary& vocab) {
  const auto words = split_words(subject);
  if (words.empty()) {
    throw DataError("subject is empty");
  }
  std::vector<std::int32_t> needle;
  for (const auto& w : words) needle.push_back(vocab.id_or_unk(w));
  // Candidates must lie strictly between BOS (0) and EOS (size-1).
  if (seq.ids.size() >= needle.size() + 2) {
    for (std::size_t start = seq.ids.size() - 1 - needle.size(); start >= 1; --start) {
      if (std::equal(needle.begin(), needle.end(), seq.ids.begin() + start)) {
        return TokenSpan{start, start + needle.size() - 1};
      }
    }
  }
  throw DataError("subject '" + std::string(subject) + "' not found in '" + seq.text + "'");
}

}  // namespace rankedit
