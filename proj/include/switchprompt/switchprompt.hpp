#pragma once

#include "switchprompt/checkpoint.hpp"
#include "switchprompt/config.hpp"
#include "switchprompt/data.hpp"
#include "switchprompt/encoder.hpp"
#include "switchprompt/experiment.hpp"
#include "switchprompt/gradcheck.hpp"
#include "switchprompt/keywords.hpp"
#include "switchprompt/model.hpp"
#include "switchprompt/optim.hpp"
#include "switchprompt/pretrain.hpp"
#include "switchprompt/prompt.hpp"
#include "switchprompt/random.hpp"
#include "switchprompt/tensor.hpp"
#include "switchprompt/tokenizer.hpp"
#include "switchprompt/trainer.hpp"
