#pragma once

#include <cctype>
#include <memory>
#include <string>
#include <vector>

#include "oodtk/common.hpp"
#include "oodtk/dataset.hpp"

namespace oodtk {

/// Boolean predicate over raw (pre-encoding) feature values, compiled from a
/// small comparison grammar:
///
///   expr       := and_expr ('or' and_expr)*
///   and_expr   := primary ('and' primary)*
///   primary    := comparison | '(' expr ')'
///   comparison := feature op value
///   op         := == != < <= > >=
///   value      := number | "quoted string"
///
/// Relational operators apply to continuous features only; equality operators
/// apply to both. Categorical comparisons must name a declared level.
class Predicate {
 public:
  static Predicate compile(const std::string& text, const FeatureSchema& schema) {
    Parser parser(text, schema);
    Predicate p;
    p.text_ = text;
    p.root_ = parser.parse();
    return p;
  }

  bool operator()(const Dataset& data, std::size_t row) const {
    return root_->eval(data, row);
  }

  const std::string& text() const { return text_; }

  std::vector<std::size_t> matching_rows(const Dataset& data) const {
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < data.n_rows(); ++r) {
      if ((*this)(data, r)) out.push_back(r);
    }
    return out;
  }

 private:
  struct Node {
    virtual ~Node() = default;
    virtual bool eval(const Dataset& data, std::size_t row) const = 0;
  };

  struct AndNode : Node {
    std::vector<std::shared_ptr<Node>> terms;
    bool eval(const Dataset& d, std::size_t r) const override {
      for (const auto& t : terms) {
        if (!t->eval(d, r)) return false;
      }
      return true;
    }
  };

  struct OrNode : Node {
    std::vector<std::shared_ptr<Node>> terms;
    bool eval(const Dataset& d, std::size_t r) const override {
      for (const auto& t : terms) {
        if (t->eval(d, r)) return true;
      }
      return false;
    }
  };

  enum class Op { Eq, Ne, Lt, Le, Gt, Ge };

  struct NumCompare : Node {
    std::size_t feature;
    Op op;
    double rhs;
    bool eval(const Dataset& d, std::size_t r) const override {
      const double v = d.continuous_value(r, feature);
      switch (op) {
        case Op::Eq: return v == rhs;
        case Op::Ne: return v != rhs;
        case Op::Lt: return v < rhs;
        case Op::Le: return v <= rhs;
        case Op::Gt: return v > rhs;
        case Op::Ge: return v >= rhs;
      }
      return false;
    }
  };

  struct LevelCompare : Node {
    std::size_t feature;
    bool negate;
    int level_idx;
    bool eval(const Dataset& d, std::size_t r) const override {
      const bool eq = d.categorical_index(r, feature) == level_idx;
      return negate ? !eq : eq;
    }
  };

  struct Token {
    enum Kind { Ident, Number, String, Operator, LParen, RParen, And, Or, End } kind;
    std::string text;
  };

  class Parser {
   public:
    Parser(const std::string& text, const FeatureSchema& schema)
        : schema_(schema) {
      tokenize(text);
    }

    std::shared_ptr<Node> parse() {
      auto node = parse_or();
      expect(Token::End, "trailing input");
      return node;
    }

   private:
    void tokenize(const std::string& s) {
      std::size_t i = 0;
      const std::size_t n = s.size();
      while (i < n) {
        const char c = s[i];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
          ++i;
        } else if (c == '(') {
          tokens_.push_back({Token::LParen, "("});
          ++i;
        } else if (c == ')') {
          tokens_.push_back({Token::RParen, ")"});
          ++i;
        } else if (c == '"') {
          std::string lit;
          ++i;
          bool closed = false;
          while (i < n) {
            if (s[i] == '\\' && i + 1 < n && (s[i + 1] == '"' || s[i + 1] == '\\')) {
              lit += s[i + 1];
              i += 2;
            } else if (s[i] == '"') {
              ++i;
              closed = true;
              break;
            } else {
              lit += s[i];
              ++i;
            }
          }
          detail::require(closed, "predicate: unterminated string literal");
          tokens_.push_back({Token::String, lit});
        } else if (c == '=' || c == '!' || c == '<' || c == '>') {
          std::string op(1, c);
          if (i + 1 < n && s[i + 1] == '=') {
            op += '=';
            i += 2;
          } else {
            ++i;
          }
          detail::require(op != "=" && op != "!", "predicate: bad operator '" + op + "'");
          tokens_.push_back({Token::Operator, op});
        } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.') {
          std::size_t j = i + 1;
          while (j < n && (std::isdigit(static_cast<unsigned char>(s[j])) || s[j] == '.' ||
                           s[j] == 'e' || s[j] == 'E' ||
                           ((s[j] == '-' || s[j] == '+') && (s[j - 1] == 'e' || s[j - 1] == 'E')))) {
            ++j;
          }
          tokens_.push_back({Token::Number, s.substr(i, j - i)});
          i = j;
        } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
          std::size_t j = i + 1;
          while (j < n && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_')) ++j;
          const std::string word = s.substr(i, j - i);
          if (word == "and") tokens_.push_back({Token::And, word});
          else if (word == "or") tokens_.push_back({Token::Or, word});
          else tokens_.push_back({Token::Ident, word});
          i = j;
        } else {
          throw Error(std::string("predicate: unexpected character '") + c + "'");
        }
      }
      tokens_.push_back({Token::End, ""});
    }

    const Token& peek() const { return tokens_[pos_]; }
    Token next() { return tokens_[pos_++]; }

    void expect(Token::Kind k, const std::string& what) {
      detail::require(peek().kind == k, "predicate: expected " + what);
      ++pos_;
    }

    std::shared_ptr<Node> parse_or() {
      auto node = std::make_shared<OrNode>();
      node->terms.push_back(parse_and());
      while (peek().kind == Token::Or) {
        next();
        node->terms.push_back(parse_and());
      }
      if (node->terms.size() == 1) return node->terms[0];
      return node;
    }

    std::shared_ptr<Node> parse_and() {
      auto node = std::make_shared<AndNode>();
      node->terms.push_back(parse_primary());
      while (peek().kind == Token::And) {
        next();
        node->terms.push_back(parse_primary());
      }
      if (node->terms.size() == 1) return node->terms[0];
      return node;
    }

    std::shared_ptr<Node> parse_primary() {
      if (peek().kind == Token::LParen) {
        next();
        auto inner = parse_or();
        expect(Token::RParen, "')'");
        return inner;
      }
      detail::require(peek().kind == Token::Ident, "predicate: expected a feature name");
      const std::string name = next().text;
      const int f = schema_.index_of(name);
      detail::require(f >= 0, "predicate: unknown feature '" + name + "'");
      detail::require(peek().kind == Token::Operator, "predicate: expected a comparison operator");
      const std::string op = next().text;
      const Token value = next();
      const auto& feat = schema_.at(static_cast<std::size_t>(f));

      if (feat.is_continuous()) {
        detail::require(value.kind == Token::Number,
                        "predicate: feature '" + name + "' is continuous; compare with a number");
        auto node = std::make_shared<NumCompare>();
        node->feature = static_cast<std::size_t>(f);
        node->op = to_op(op);
        node->rhs = parse_double(value.text, "predicate: value for '" + name + "'");
        return node;
      }
      detail::require(value.kind == Token::String,
                      "predicate: feature '" + name + "' is categorical; compare with a quoted level");
      detail::require(op == "==" || op == "!=",
                      "predicate: operator '" + op + "' not valid for categorical feature '" + name + "'");
      const int lv = feat.level_index(value.text);
      detail::require(lv >= 0, "predicate: level '" + value.text + "' not declared for feature '" + name + "'");
      auto node = std::make_shared<LevelCompare>();
      node->feature = static_cast<std::size_t>(f);
      node->negate = (op == "!=");
      node->level_idx = lv;
      return node;
    }

    static Op to_op(const std::string& s) {
      if (s == "==") return Op::Eq;
      if (s == "!=") return Op::Ne;
      if (s == "<") return Op::Lt;
      if (s == "<=") return Op::Le;
      if (s == ">") return Op::Gt;
      if (s == ">=") return Op::Ge;
      throw Error("predicate: bad operator '" + s + "'");
    }

    const FeatureSchema& schema_;
    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
  };

  std::string text_;
  std::shared_ptr<Node> root_;
};

}  // namespace oodtk
