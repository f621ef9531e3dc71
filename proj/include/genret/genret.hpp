#pragma once

#include "genret/catalog.hpp"
#include "genret/corpus.hpp"
#include "genret/decoder.hpp"
#include "genret/dpo.hpp"
#include "genret/embedding.hpp"
#include "genret/error.hpp"
#include "genret/jsonl.hpp"
#include "genret/metrics.hpp"
#include "genret/neural_scorer.hpp"
#include "genret/optim.hpp"
#include "genret/pipeline.hpp"
#include "genret/prompting.hpp"
#include "genret/random.hpp"
#include "genret/rqvae.hpp"
#include "genret/scorer.hpp"
#include "genret/semantic_id.hpp"
#include "genret/serving.hpp"
#include "genret/synthetic.hpp"
#include "genret/text.hpp"
#include "genret/trie.hpp"
