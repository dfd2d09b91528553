#pragma once

#include "toblend/core.hpp"
#include "toblend/rng.hpp"
#include "toblend/sha256.hpp"
#include "toblend/backend.hpp"
#include "toblend/wire.hpp"
#include "toblend/ngram.hpp"
#include "toblend/http_backend.hpp"
#include "toblend/server.hpp"
#include "toblend/score_cache.hpp"
#include "toblend/blend.hpp"
#include "toblend/detect.hpp"
#include "toblend/data.hpp"
#include "toblend/records.hpp"
#include "toblend/eval.hpp"
#include "toblend/pipeline.hpp"
