"""Training and inference engines."""

from .classifier_trainer import train_classifier
from .inpainter_trainer import train_inpainter, pci_loss
from .attributor_trainer import train_attributor
from .attribution import attribute, attribute_batch

__all__ = ['train_classifier', 'train_inpainter', 'pci_loss', 'train_attributor', 'attribute', 'attribute_batch']
