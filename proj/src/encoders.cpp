#include "lgcd/encoders.hpp"

#include <unordered_map>

#include "lgcd/util.hpp"

namespace lgcd {

Matrix embed_item_texts(std::span<const Item> items, Embedder& embedder) {
  Matrix out(items.size(), embedder.dim());
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string text = items[i].text.joined();
    if (auto it = seen.find(text); it != seen.end()) {
      std::copy(out.row(it->second).begin(), out.row(it->second).end(), out.row(i).begin());
      continue;
    }
    std::vector<double> v;
    try {
      v = embedder.embed(text);
    } catch (const std::exception& e) {
      throw std::runtime_error("embedding item '" + items[i].id + "' failed: " + e.what());
    }
    if (v.size() != out.cols())
      throw std::runtime_error("embedding item '" + items[i].id + "' has width " +
                               std::to_string(v.size()));
    std::copy(v.begin(), v.end(), out.row(i).begin());
    seen.emplace(text, i);
  }
  return out;
}

ItemTables::ItemTables(nn::ParamStore& store, const Catalog& catalog, Matrix raw_text,
                       std::size_t d, nn::Rng& rng)
    : catalog_(&catalog), d_(d), raw_text_(std::move(raw_text)) {
  if (raw_text_.rows() != catalog.size())
    throw std::invalid_argument("raw text table rows != catalog size");
  id_ = store.add("item.id", "tables", nn::normal_matrix(catalog.size(), d, 0.1, rng));
  text_proj_ = nn::Linear(store, "item.text_proj", "tables", raw_text_.cols(), d, true, rng);
  fusion_[0] = nn::Linear(store, "fusion.A", "tables", 2 * d, d, true, rng);
  fusion_[1] = nn::Linear(store, "fusion.B", "tables", 2 * d, d, true, rng);
}

ItemTables::View ItemTables::view() const {
  View v;
  v.id = id_;
  v.text = project_text(raw_text_);
  for (Domain dom : {Domain::A, Domain::B}) {
    const std::size_t off = catalog_->offset(dom), n = catalog_->count(dom);
    v.fusion[index_of(dom)] =
        fuse(ag::slice_rows(v.id, off, n), ag::slice_rows(v.text, off, n), dom);
  }
  const ag::Var parts[] = {v.fusion[0], v.fusion[1]};
  v.fusion_all = ag::concat_rows(parts);
  return v;
}

ag::Var ItemTables::fuse(const ag::Var& h_id, const ag::Var& h_text, Domain domain) const {
  return fusion_[index_of(domain)](ag::concat_cols(h_id, h_text));
}

DomainEncoders::DomainEncoders(nn::ParamStore& store, const nn::EncoderConfig& cfg, nn::Rng& rng)
    : cfg_(cfg) {
  for (Domain d : {Domain::A, Domain::B})
    for (Modality m : {Modality::id, Modality::text}) {
      const std::string name = std::string("enc.") + std::string(domain_name(d)) +
                               (m == Modality::id ? ".id" : ".text");
      enc_[2 * index_of(d) + static_cast<std::size_t>(m)] =
          nn::TransformerEncoder(store, name, "encoders", cfg, rng);
    }
}

ag::Var encode_sequence(const DomainEncoders& enc, const ItemTables::View& view,
                        std::span<const ItemIndex> items, Domain domain, Modality modality) {
  if (items.empty()) throw DataError("encode_sequence: empty sequence");
  const std::size_t max_len = enc.config().max_len;
  if (items.size() > max_len) items = items.subspan(items.size() - max_len);
  const ag::Var rows = ag::gather_rows(modality == Modality::id ? view.id : view.text, items);
  return enc.get(domain, modality).last_state(rows);
}

ag::Var encode_rows(const DomainEncoders& enc, const ag::Var& rows, Domain domain,
                    Modality modality) {
  if (rows.rows() == 0) throw DataError("encode_rows: empty sequence");
  const std::size_t max_len = enc.config().max_len;
  ag::Var r = rows.rows() > max_len ? ag::slice_rows(rows, rows.rows() - max_len, max_len) : rows;
  return enc.get(domain, modality).last_state(r);
}

ag::Var fuse_representations(const ItemTables& tables, const ag::Var& h_id, const ag::Var& h_text,
                             Domain domain) {
  if (h_id.cols() != tables.d() || h_text.cols() != tables.d())
    throw std::invalid_argument("fuse_representations: width mismatch");
  return tables.fuse(h_id, h_text, domain);
}

ag::Var pretrain_loss(const DomainEncoders& enc, const ItemTables& tables,
                      const ItemTables::View& view,
                      std::span<const std::vector<ItemIndex>> sequences, Domain domain,
                      const PretrainOptions& opts) {
  const Catalog& cat = tables.catalog();
  const ItemIndex off = opts.widen_support ? 0 : cat.offset(domain);
  const ag::Var& support = opts.widen_support ? view.fusion_all : view.fusion[index_of(domain)];
  const std::size_t max_len = enc.config().max_len;

  std::vector<ag::Var> terms;
  std::size_t pairs = 0;
  for (const auto& full : sequences) {
    if (full.size() < 2) continue;
    std::span<const ItemIndex> seq(full);
    if (seq.size() > max_len + 1) seq = seq.subspan(seq.size() - max_len - 1);
    const auto inputs = seq.first(seq.size() - 1);
    std::vector<std::size_t> targets;
    for (ItemIndex it : seq.subspan(1)) {
      if (!opts.widen_support && cat.domain_of(it) != domain)
        throw DataError("pretrain_loss: item outside the sequence domain");
      targets.push_back(it - off);
    }
    const ag::Var h_id = enc.get(domain, Modality::id).forward(ag::gather_rows(view.id, inputs));
    const ag::Var h_text =
        enc.get(domain, Modality::text).forward(ag::gather_rows(view.text, inputs));
    const ag::Var logits = ag::matmul_nt(tables.fuse(h_id, h_text, domain), support);
    terms.push_back(ag::cross_entropy_rows(logits, targets));
    pairs += targets.size();
  }
  if (pairs == 0) throw DataError("pretrain batch has no (prefix, next item) pair");
  return ag::scale(ag::add_scalars(terms), 1.0 / static_cast<double>(pairs));
}

double pretrain_step(const DomainEncoders& enc, const ItemTables& tables, nn::ParamStore& store,
                     nn::Adam& adam, std::span<const std::vector<ItemIndex>> sequences,
                     Domain domain, const PretrainOptions& opts) {
  const ItemTables::View view = tables.view();
  const ag::Var loss = pretrain_loss(enc, tables, view, sequences, domain, opts);
  ag::backward(loss);
  adam.step(store);
  return loss.item();
}

}  // namespace lgcd
