# Power LR Toolkit — módulos
