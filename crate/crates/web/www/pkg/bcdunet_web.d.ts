/* tslint:disable */
/* eslint-disable */

/**
 * A small network trained on synthetic images a few epochs at a time.
 */
export class DemoTrainer {
    free(): void;
    [Symbol.dispose](): void;
    auc(): number;
    epoch(): number;
    images(): number;
    input(index: number): Uint8Array;
    last_loss(): number;
    /**
     * `key=value` lines of the metrics report.
     */
    metrics(): string;
    /**
     * `kind` is `discs` or `vessels`; `dense_blocks` sets the bottleneck depth.
     */
    constructor(kind: string, images: number, dense_blocks: number, seed: number);
    params(): number;
    /**
     * Probability map of image `index`, as bytes.
     */
    prediction(index: number): Uint8Array;
    /**
     * ROC curve over all training images as flat `(fpr, tpr)` pairs.
     */
    roc(): Float64Array;
    size(): number;
    /**
     * Runs `epochs` passes over the images and returns the last mean loss.
     */
    step(epochs: number): number;
    target(index: number): Uint8Array;
}

/**
 * A synthetic CT slice run through the surrounding-tissue preprocessing.
 */
export class LungDemo {
    free(): void;
    [Symbol.dispose](): void;
    lung(): Uint8Array;
    constructor(size: number, seed: number);
    /**
     * Holes enclosed by the surrounding mask.
     */
    recovered(): Uint8Array;
    /**
     * Share of pixels where the recovered lung agrees with the true lung.
     */
    recovery_agreement(): number;
    size(): number;
    /**
     * Slice clamped to +-512 HU and scaled to bytes.
     */
    slice(): Uint8Array;
    surrounding(): Uint8Array;
    surrounding_pixels(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demotrainer_free: (a: number, b: number) => void;
    readonly __wbg_lungdemo_free: (a: number, b: number) => void;
    readonly demotrainer_auc: (a: number) => [number, number, number];
    readonly demotrainer_epoch: (a: number) => number;
    readonly demotrainer_images: (a: number) => number;
    readonly demotrainer_input: (a: number, b: number) => [number, number];
    readonly demotrainer_last_loss: (a: number) => number;
    readonly demotrainer_metrics: (a: number) => [number, number, number, number];
    readonly demotrainer_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly demotrainer_params: (a: number) => number;
    readonly demotrainer_prediction: (a: number, b: number) => [number, number, number, number];
    readonly demotrainer_roc: (a: number) => [number, number, number, number];
    readonly demotrainer_size: (a: number) => number;
    readonly demotrainer_step: (a: number, b: number) => [number, number, number];
    readonly demotrainer_target: (a: number, b: number) => [number, number];
    readonly lungdemo_lung: (a: number) => [number, number];
    readonly lungdemo_new: (a: number, b: number) => [number, number, number];
    readonly lungdemo_recovered: (a: number) => [number, number];
    readonly lungdemo_recovery_agreement: (a: number) => number;
    readonly lungdemo_size: (a: number) => number;
    readonly lungdemo_slice: (a: number) => [number, number];
    readonly lungdemo_surrounding: (a: number) => [number, number];
    readonly lungdemo_surrounding_pixels: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
