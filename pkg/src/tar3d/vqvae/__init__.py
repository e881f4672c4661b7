from .losses import codebook_loss, reconstruction_loss, vqvae_loss
from .model import TriplaneVQVAE, VQVAEConfig, fourier_encode, paper_scale_config
from .train import TrainReport, split_holdout, train_vqvae
