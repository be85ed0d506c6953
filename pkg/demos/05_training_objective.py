"""
Training objective
==================

The backbone loss covers coarse codes, the decoder loss sums the seven
refinement levels per frame. Stage 1 mixes them half and half; stage 2
trains the refiner alone with the backbone frozen.
"""

import math

import numpy as np

from chroma_stream import (
    ChromaSystem, StageSchedule, SystemConfig, backbone_loss, decoder_loss, grad_check, train,
)
from chroma_stream.training import batch_losses, generate_synthetic_pair
from chroma_stream.weights import weights_checksum

print("uniform backbone loss:", backbone_loss(np.zeros((4, 256)), [1, 2, 3, 4]), "ln 256 =", math.log(256))
print("uniform decoder loss:", decoder_loss(np.zeros((4, 7, 256)), np.zeros((4, 7), int)))

cfg = SystemConfig()
system = ChromaSystem.build(cfg)
pair = generate_synthetic_pair(0, 12, stub=system.stub, codec=system.codec)
print("synthetic pair:", pair.L, "frames,", pair.reasoner_out.T, "text tokens")

# spot-check autograd against central differences
err = grad_check(lambda: batch_losses(system.backbone, system.refiner, pair)[1],
                 list(system.refiner.parameters()), n_coords=200)
print(f"decoder_loss gradient check: max rel err {err:.1e}")

run = train(system.backbone, system.refiner, system.stub, system.codec,
            StageSchedule.for_stage(1), cfg.train(60))
print("stage 1:", run.trace[0].losses.combined, "->", run.trace[-1].losses.combined)

before = weights_checksum(system.backbone)
train(system.backbone, system.refiner, system.stub, system.codec, StageSchedule.for_stage(2), cfg.train(10))
print("stage 2 left the backbone untouched:", before == weights_checksum(system.backbone))
