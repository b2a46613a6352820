#pragma once

#include "vlrm/aho_corasick.hpp"
#include "vlrm/checkpoint.hpp"
#include "vlrm/config.hpp"
#include "vlrm/decode.hpp"
#include "vlrm/error.hpp"
#include "vlrm/eval.hpp"
#include "vlrm/model.hpp"
#include "vlrm/optim.hpp"
#include "vlrm/rewardshape.hpp"
#include "vlrm/scorers.hpp"
#include "vlrm/tape.hpp"
#include "vlrm/textcore.hpp"
#include "vlrm/trainer.hpp"
#include "vlrm/util.hpp"
