#ifndef RELXFORGE_RELXFORGE_HPP_
#define RELXFORGE_RELXFORGE_HPP_

#include "relxforge/checkpoint.hpp"
#include "relxforge/corpus.hpp"
#include "relxforge/crc64.hpp"
#include "relxforge/error.hpp"
#include "relxforge/io.hpp"
#include "relxforge/metrics.hpp"
#include "relxforge/model.hpp"
#include "relxforge/optim.hpp"
#include "relxforge/pairs.hpp"
#include "relxforge/rng.hpp"
#include "relxforge/schema.hpp"
#include "relxforge/subset.hpp"
#include "relxforge/synthetic.hpp"
#include "relxforge/tensor.hpp"
#include "relxforge/training.hpp"
#include "relxforge/utf8.hpp"
#include "relxforge/vocab.hpp"

#endif  // RELXFORGE_RELXFORGE_HPP_
