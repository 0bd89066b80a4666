#include "hierolm/model.hpp"

#include <algorithm>
#include <cmath>

#include "hierolm/lstm.hpp"
#include "hierolm/nplm.hpp"
#include "hierolm/rnn.hpp"

namespace hierolm {

std::string_view architecture_name(Architecture arch) {
  switch (arch) {
    case Architecture::kLstm: return "lstm";
    case Architecture::kRnn: return "rnn";
    case Architecture::kNplm: return "nplm";
  }
  return "unknown";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "lstm") return Architecture::kLstm;
  if (name == "rnn") return Architecture::kRnn;
  if (name == "nplm") return Architecture::kNplm;
  throw Error(ErrorCode::kInvalidArgument, "unknown architecture '" + std::string(name) + "' (lstm, rnn, nplm)");
}

void ModelDims::validate() const {
  if (vocab_size <= static_cast<std::size_t>(kNumSpecialTokens) - 1 || embed_size < 1 || hidden_size < 1 ||
      context_order < 1)
    throw Error(ErrorCode::kInvalidArgument,
                "model dims must be >= 1 (vocab " + std::to_string(vocab_size) + ", embed " +
                    std::to_string(embed_size) + ", hidden " + std::to_string(hidden_size) + ", order " +
                    std::to_string(context_order) + ")");
}

Batch Batch::from_sentences(std::span<const EncodedSentence* const> sentences) {
  Batch b;
  b.size = sentences.size();
  for (const EncodedSentence* s : sentences) {
    if (s->size() < 2) throw Error(ErrorCode::kSequenceTooShort, "encoded sentence needs BOS and EOS");
    b.length = std::max(b.length, s->size());
  }
  b.ids.assign(b.size * b.length, kPadId);
  for (std::size_t r = 0; r < b.size; ++r)
    std::copy(sentences[r]->begin(), sentences[r]->end(), b.ids.begin() + static_cast<std::ptrdiff_t>(r * b.length));
  return b;
}

Batch Batch::from_sentences(std::span<const EncodedSentence> sentences) {
  std::vector<const EncodedSentence*> ptrs;
  ptrs.reserve(sentences.size());
  for (const auto& s : sentences) ptrs.push_back(&s);
  return from_sentences(std::span<const EncodedSentence* const>(ptrs));
}

std::vector<std::int32_t> Batch::targets() const {
  std::vector<std::int32_t> out(steps() * size);
  for (std::size_t t = 0; t < steps(); ++t)
    for (std::size_t r = 0; r < size; ++r) out[t * size + r] = target(t, r);
  return out;
}

std::vector<std::uint8_t> Batch::mask() const {
  std::vector<std::uint8_t> out(steps() * size);
  for (std::size_t t = 0; t < steps(); ++t)
    for (std::size_t r = 0; r < size; ++r) out[t * size + r] = target(t, r) != kPadId;
  return out;
}

std::size_t Batch::active_positions() const {
  std::size_t n = 0;
  for (std::uint8_t m : mask()) n += m;
  return n;
}

template <typename T>
Parameter<T>& LanguageModel<T>::parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw Error(ErrorCode::kInvalidArgument, "no parameter named " + std::string(name));
}

template <typename T>
const Parameter<T>& LanguageModel<T>::parameter(std::string_view name) const {
  return const_cast<LanguageModel*>(this)->parameter(name);
}

template <typename T>
std::vector<Parameter<T>*> LanguageModel<T>::parameter_ptrs() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

template <typename T>
std::size_t LanguageModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void LanguageModel<T>::zero_grad() {
  for (auto& p : params_) p.grad.set_zero();
}

template <typename T>
void LanguageModel<T>::initialize(const InitOptions& options) {
  Rng rng(options.seed);
  for (auto& p : params_) {
    p.grad.set_zero();
    if (p.value.rows() == 1) {
      p.value.set_zero();
      continue;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
    for (T& v : p.value.values()) v = static_cast<T>(rng.uniform(-limit, limit));
  }
  if (options.zero_output_head) {
    parameter("W_y").value.set_zero();
    parameter("b_y").value.set_zero();
  }
}

template <typename T>
void LanguageModel<T>::check_tokens(std::span<const TokenId> ids) const {
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= dims_.vocab_size)
      throw Error(ErrorCode::kInvalidArgument, "token id " + std::to_string(id) + " outside vocabulary of " +
                                                   std::to_string(dims_.vocab_size));
  }
}

template <typename T>
Matrix<T> LanguageModel<T>::embed(std::span<const TokenId> ids) const {
  const Matrix<T>& e = embedding();
  Matrix<T> out(ids.size(), e.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    auto src = e.row(static_cast<std::size_t>(ids[r]));
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

template <typename T>
void LanguageModel<T>::accumulate_embedding_grad(std::span<const TokenId> ids, const Matrix<T>& d) {
  Matrix<T>& g = params_.front().grad;
  for (std::size_t r = 0; r < ids.size(); ++r) {
    auto dst = g.row(static_cast<std::size_t>(ids[r]));
    auto src = d.row(r);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

template <typename T>
Matrix<T> dropout_mask(std::size_t rows, std::size_t cols, double p, Rng& rng) {
  Matrix<T> mask(rows, cols);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (T& v : mask.values()) v = rng.uniform() < p ? T{0} : keep;
  return mask;
}

template <typename T>
void apply_mask(Matrix<T>& m, const Matrix<T>& mask) {
  if (!m.same_shape(mask)) throw Error(ErrorCode::kShapeMismatch, "dropout mask shape");
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] *= mask.data()[i];
}

template <typename T>
std::unique_ptr<LanguageModel<T>> make_model(Architecture arch, const ModelDims& dims, const InitOptions& init) {
  dims.validate();
  std::unique_ptr<LanguageModel<T>> model;
  switch (arch) {
    case Architecture::kLstm: model = std::make_unique<LstmModel<T>>(dims); break;
    case Architecture::kRnn: model = std::make_unique<RnnModel<T>>(dims); break;
    case Architecture::kNplm: model = std::make_unique<NplmModel<T>>(dims); break;
  }
  model->initialize(init);
  return model;
}

template <typename To, typename From>
std::unique_ptr<LanguageModel<To>> convert_model(const LanguageModel<From>& model) {
  auto out = make_model<To>(model.architecture(), model.dims(), InitOptions{});
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    out->parameters()[i].value = model.parameters()[i].value.template cast<To>();
    out->parameters()[i].grad.set_zero();
  }
  return out;
}

template class LanguageModel<float>;
template class LanguageModel<double>;
template Matrix<float> dropout_mask<float>(std::size_t, std::size_t, double, Rng&);
template Matrix<double> dropout_mask<double>(std::size_t, std::size_t, double, Rng&);
template void apply_mask<float>(Matrix<float>&, const Matrix<float>&);
template void apply_mask<double>(Matrix<double>&, const Matrix<double>&);
template std::unique_ptr<LanguageModel<float>> make_model<float>(Architecture, const ModelDims&, const InitOptions&);
template std::unique_ptr<LanguageModel<double>> make_model<double>(Architecture, const ModelDims&, const InitOptions&);
template std::unique_ptr<LanguageModel<double>> convert_model<double, float>(const LanguageModel<float>&);
template std::unique_ptr<LanguageModel<float>> convert_model<float, double>(const LanguageModel<double>&);
template std::unique_ptr<LanguageModel<float>> convert_model<float, float>(const LanguageModel<float>&);
template std::unique_ptr<LanguageModel<double>> convert_model<double, double>(const LanguageModel<double>&);

}  // namespace hierolm
