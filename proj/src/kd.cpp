#include "laddernat/data.hpp"
#include "laddernat/infer.hpp"

namespace laddernat {

KdCorpora kd_regenerate(const Corpus& corpus, const ModelBundle& at_bundle, int max_len) {
  if (at_bundle.kind != ModelKind::AT)
    throw std::invalid_argument("kd_regenerate: AT bundle required");
  if (!at_bundle.trained) throw std::invalid_argument("kd_regenerate: AT bundle is untrained");

  KdCorpora kd;
  kd.src2tgt.spec = corpus.spec;
  kd.tgt2src.spec = corpus.spec;
  kd.src2tgt.pairs.reserve(corpus.pairs.size());
  kd.tgt2src.pairs.reserve(corpus.pairs.size());

  auto regenerate = [&](const TokenSeq& input, Direction dir) {
    TokenSeq out = strip_eos(translate_at(input, at_bundle, dir, max_len).tokens);
    if (out.empty()) {
      out.push_back(kEosId);
      ++kd.empty_outputs_replaced;
    }
    return out;
  };

  for (const auto& p : corpus.pairs) {
    kd.src2tgt.pairs.push_back({p.source, regenerate(p.source, Direction::Forward), p.register_id});
    kd.tgt2src.pairs.push_back({regenerate(p.target, Direction::Reverse), p.target, p.register_id});
  }
  return kd;
}

}  // namespace laddernat
