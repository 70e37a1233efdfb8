#pragma once
// Item tables (ID, projected text, fused) and the four per-domain sequence
// encoders: (A, ID), (A, text), (B, ID), (B, text).

#include <array>
#include <span>
#include <vector>

#include "lgcd/corpus.hpp"
#include "lgcd/embedder.hpp"
#include "lgcd/nn.hpp"

namespace lgcd {

enum class Modality : std::uint8_t { id = 0, text = 1 };

/// One raw sentence-embedding row per item, from ItemText::joined(). Rows are
/// computed once per distinct text. Embedder failures are rethrown naming the item.
Matrix embed_item_texts(std::span<const Item> items, Embedder& embedder);

class ItemTables {
 public:
  ItemTables() = default;
  /// `raw_text` is |catalog| x embed_dim and stays frozen.
  ItemTables(nn::ParamStore& store, const Catalog& catalog, Matrix raw_text, std::size_t d,
             nn::Rng& rng);

  /// Graph handles for one optimisation step. Building the view once per
  /// batch lets every record share the projected and fused tables.
  struct View {
    ag::Var id;                     // N x d
    ag::Var text;                   // N x d
    std::array<ag::Var, 2> fusion;  // per domain, count(domain) x d
    ag::Var fusion_all;             // N x d, catalog order
  };
  View view() const;

  /// Projects raw sentence embeddings (rows) into the d-wide text space.
  ag::Var project_text(const Matrix& raw) const { return text_proj_(ag::constant(raw)); }
  /// Row-wise W_fusion [h_id ; h_text] + b_fusion for `domain`.
  ag::Var fuse(const ag::Var& h_id, const ag::Var& h_text, Domain domain) const;

  const ag::Var& id_table() const noexcept { return id_; }
  const nn::Linear& text_projection() const noexcept { return text_proj_; }
  const nn::Linear& fusion(Domain d) const noexcept { return fusion_[index_of(d)]; }
  const Matrix& raw_text() const noexcept { return raw_text_; }
  std::size_t d() const noexcept { return d_; }
  const Catalog& catalog() const noexcept { return *catalog_; }

 private:
  const Catalog* catalog_ = nullptr;
  std::size_t d_ = 0;
  Matrix raw_text_;
  ag::Var id_;
  nn::Linear text_proj_;
  std::array<nn::Linear, 2> fusion_;
};

class DomainEncoders {
 public:
  DomainEncoders() = default;
  DomainEncoders(nn::ParamStore& store, const nn::EncoderConfig& cfg, nn::Rng& rng);

  const nn::TransformerEncoder& get(Domain d, Modality m) const {
    return enc_[2 * index_of(d) + static_cast<std::size_t>(m)];
  }
  const nn::EncoderConfig& config() const noexcept { return cfg_; }

 private:
  nn::EncoderConfig cfg_;
  std::array<nn::TransformerEncoder, 4> enc_;
};

/// Last-position state (1 x d) of `domain`'s `modality` encoder over the most
/// recent max_len items. Throws DataError on an empty sequence.
ag::Var encode_sequence(const DomainEncoders& enc, const ItemTables::View& view,
                        std::span<const ItemIndex> items, Domain domain, Modality modality);

/// Encodes pre-embedded rows (L x d) with the given encoder's text path.
ag::Var encode_rows(const DomainEncoders& enc, const ag::Var& rows, Domain domain,
                    Modality modality);

ag::Var fuse_representations(const ItemTables& tables, const ag::Var& h_id, const ag::Var& h_text,
                             Domain domain);

struct PretrainOptions {
  /// Softmax over the whole catalog instead of the sequence's own domain.
  bool widen_support = false;
};

/// Mean next-item cross-entropy over every (prefix, next) pair of the given
/// single-domain sequences. Throws DataError when no pair exists.
ag::Var pretrain_loss(const DomainEncoders& enc, const ItemTables& tables,
                      const ItemTables::View& view,
                      std::span<const std::vector<ItemIndex>> sequences, Domain domain,
                      const PretrainOptions& opts = {});

/// pretrain_loss + backward + one optimiser update. Returns the loss.
double pretrain_step(const DomainEncoders& enc, const ItemTables& tables, nn::ParamStore& store,
                     nn::Adam& adam, std::span<const std::vector<ItemIndex>> sequences,
                     Domain domain, const PretrainOptions& opts = {});

}  // namespace lgcd
