#pragma once

// Byte-level BPE tokenizer (GPT-2 byte map, rank-ordered merges).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace hidegate {

using TokenId = std::uint32_t;

struct TokenSequence {
  std::vector<TokenId> ids;

  std::size_t size() const noexcept { return ids.size(); }
  bool empty() const noexcept { return ids.empty(); }
  TokenId operator[](std::size_t i) const { return ids[i]; }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

// Fixed bijection between the 256 byte values and printable code points,
// identical to the GPT-2 bytes_to_unicode table.
namespace byte_map {
char32_t to_code_point(std::uint8_t byte) noexcept;
// Returns -1 when the code point is outside the image of the byte map.
int to_byte(char32_t cp) noexcept;
// UTF-8 string of byte-mapped characters for a raw byte string.
std::string encode_bytes(std::string_view raw);
}  // namespace byte_map

class Vocabulary {
 public:
  Vocabulary() = default;
  // ids must form the dense range [0, pieces.size()).
  explicit Vocabulary(std::unordered_map<std::string, TokenId> pieces);

  std::size_t size() const noexcept { return id_to_piece_.size(); }
  const std::string& piece(TokenId id) const;
  // Returns false when the piece is unknown.
  bool find(std::string_view piece, TokenId& out) const;

  // Raw bytes a token decodes to. Special tokens (pieces outside the byte
  // map, or named <|...|>) yield their UTF-8 text verbatim.
  const std::string& bytes(TokenId id) const { return id_to_bytes_.at(id); }
  bool is_special(TokenId id) const { return special_.at(id); }
  // Standalone-writable: not special, valid UTF-8, no control characters.
  bool is_printable(TokenId id) const { return printable_.at(id); }

 private:
  std::unordered_map<std::string, TokenId> piece_to_id_;
  std::vector<std::string> id_to_piece_;
  std::vector<std::string> id_to_bytes_;
  std::vector<bool> special_;
  std::vector<bool> printable_;
};

struct MergeRule {
  std::string left;
  std::string right;
};

class MergeRules {
 public:
  MergeRules() = default;
  // Validates uniqueness and that every merge resolves within vocab.
  MergeRules(std::vector<MergeRule> rules, const Vocabulary& vocab);

  std::size_t size() const noexcept { return rules_.size(); }
  const std::vector<MergeRule>& rules() const noexcept { return rules_; }

  struct Resolved {
    std::uint32_t rank;
    TokenId merged;
  };
  // nullptr if (left, right) is not a merge.
  const Resolved* lookup(TokenId left, TokenId right) const;

 private:
  static std::uint64_t key(TokenId l, TokenId r) noexcept {
    return (static_cast<std::uint64_t>(l) << 32) | r;
  }
  std::vector<MergeRule> rules_;
  std::unordered_map<std::uint64_t, Resolved> table_;
};

enum class Pretokenizer {
  none,  // merges may span the whole text
  gpt2,  // GPT-2 word/number/punctuation/whitespace chunks (ASCII classes)
};

struct DecodeResult {
  std::string text;
  bool lossy = false;  // invalid UTF-8 replaced by U+FFFD
};

class Tokenizer {
 public:
  Tokenizer(Vocabulary vocab, MergeRules merges,
            Pretokenizer pre = Pretokenizer::none)
      : vocab_(std::move(vocab)), merges_(std::move(merges)), pre_(pre) {}

  const Vocabulary& vocab() const noexcept { return vocab_; }
  const MergeRules& merges() const noexcept { return merges_; }
  Pretokenizer pretokenizer() const noexcept { return pre_; }

  TokenSequence encode(std::string_view text) const;
  DecodeResult decode(const TokenSequence& seq) const;
  DecodeResult decode(std::span<const TokenId> ids) const;

 private:
  Vocabulary vocab_;
  MergeRules merges_;
  Pretokenizer pre_;
};

Vocabulary parse_vocab_json(std::string_view json_text);
std::vector<MergeRule> parse_merges_text(std::string_view text);

std::pair<Vocabulary, MergeRules> load_assets(
    const std::filesystem::path& vocab_path,
    const std::filesystem::path& merges_path);

// Splits text into pre-tokenization chunks (GPT-2 pattern, ASCII classes,
// bytes >= 0x80 treated as letters).
std::vector<std::string_view> gpt2_chunks(std::string_view text);

TokenSequence encode(std::string_view text, const Vocabulary& vocab,
                     const MergeRules& merges);
DecodeResult decode(const TokenSequence& seq, const Vocabulary& vocab);

const char* to_string(Pretokenizer p) noexcept;
Pretokenizer pretokenizer_from_string(std::string_view name);

}  // namespace hidegate
