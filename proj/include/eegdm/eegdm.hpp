#pragma once

// Everything: model, training, I/O and the command implementations.
#include "eegdm/attention/attention.hpp"
#include "eegdm/attention/blocks.hpp"
#include "eegdm/backbone/extract.hpp"
#include "eegdm/backbone/ssmdp.hpp"
#include "eegdm/cli/commands.hpp"
#include "eegdm/cli/config.hpp"
#include "eegdm/diffusion/process.hpp"
#include "eegdm/diffusion/schedule.hpp"
#include "eegdm/io/checkpoint.hpp"
#include "eegdm/io/latent_cache.hpp"
#include "eegdm/latent/pool.hpp"
#include "eegdm/lft/lft.hpp"
#include "eegdm/metrics/metrics.hpp"
#include "eegdm/numerics/autograd.hpp"
#include "eegdm/numerics/errors.hpp"
#include "eegdm/numerics/fft.hpp"
#include "eegdm/numerics/gradcheck.hpp"
#include "eegdm/numerics/module.hpp"
#include "eegdm/numerics/ops.hpp"
#include "eegdm/numerics/parallel.hpp"
#include "eegdm/numerics/random.hpp"
#include "eegdm/numerics/tensor.hpp"
#include "eegdm/signal/compand.hpp"
#include "eegdm/signal/filter.hpp"
#include "eegdm/signal/manifest.hpp"
#include "eegdm/signal/segment.hpp"
#include "eegdm/signal/segment_io.hpp"
#include "eegdm/signal/synth.hpp"
#include "eegdm/ssm/bank.hpp"
#include "eegdm/ssm/s4d.hpp"
#include "eegdm/training/early_stop.hpp"
#include "eegdm/training/log.hpp"
#include "eegdm/training/loss.hpp"
#include "eegdm/training/optim.hpp"
#include "eegdm/training/trainer.hpp"
