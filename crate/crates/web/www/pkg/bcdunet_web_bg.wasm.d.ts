/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demotrainer_free: (a: number, b: number) => void;
export const __wbg_lungdemo_free: (a: number, b: number) => void;
export const demotrainer_auc: (a: number) => [number, number, number];
export const demotrainer_epoch: (a: number) => number;
export const demotrainer_images: (a: number) => number;
export const demotrainer_input: (a: number, b: number) => [number, number];
export const demotrainer_last_loss: (a: number) => number;
export const demotrainer_metrics: (a: number) => [number, number, number, number];
export const demotrainer_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const demotrainer_params: (a: number) => number;
export const demotrainer_prediction: (a: number, b: number) => [number, number, number, number];
export const demotrainer_roc: (a: number) => [number, number, number, number];
export const demotrainer_size: (a: number) => number;
export const demotrainer_step: (a: number, b: number) => [number, number, number];
export const demotrainer_target: (a: number, b: number) => [number, number];
export const lungdemo_lung: (a: number) => [number, number];
export const lungdemo_new: (a: number, b: number) => [number, number, number];
export const lungdemo_recovered: (a: number) => [number, number];
export const lungdemo_recovery_agreement: (a: number) => number;
export const lungdemo_size: (a: number) => number;
export const lungdemo_slice: (a: number) => [number, number];
export const lungdemo_surrounding: (a: number) => [number, number];
export const lungdemo_surrounding_pixels: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
