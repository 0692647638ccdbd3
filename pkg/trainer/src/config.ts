/** Network configuration and the shape constraints it must satisfy. */

export interface NetConfig {
  /** encoder depth; level i carries baseChannels * 2^i feature channels */
  levels: number;
  baseChannels: number;
  /** cubic training patch edge; must survive levels-1 rounds of 2x pooling */
  patchSize: number;
  /** 1: single time-point encoder-decoder; 2/3: siamese with frozen encoder */
  stage: 1 | 2 | 3;
}

export const DEFAULT_CONFIG: Omit<NetConfig, "stage"> = {
  levels: 3,
  baseChannels: 8,
  patchSize: 16,
};

export class ConfigError extends Error {}

export function validateConfig(cfg: NetConfig): NetConfig {
  if (!Number.isInteger(cfg.levels) || cfg.levels < 2) {
    throw new ConfigError(`levels must be an integer >= 2, got ${cfg.levels}`);
  }
  if (!Number.isInteger(cfg.baseChannels) || cfg.baseChannels < 1) {
    throw new ConfigError(`baseChannels must be a positive integer, got ${cfg.baseChannels}`);
  }
  const stride = 2 ** (cfg.levels - 1);
  if (!Number.isInteger(cfg.patchSize) || cfg.patchSize < stride || cfg.patchSize % stride !== 0) {
    throw new ConfigError(
      `patchSize ${cfg.patchSize} must be a positive multiple of 2^(levels-1) = ${stride}`,
    );
  }
  if (![1, 2, 3].includes(cfg.stage)) {
    throw new ConfigError(`stage must be 1, 2 or 3, got ${cfg.stage}`);
  }
  return cfg;
}

/** channel count at encoder level i */
export function levelChannels(cfg: NetConfig, level: number): number {
  return cfg.baseChannels * 2 ** level;
}
