/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const capture: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const degrade: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const degraded_psnr: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const families: () => [number, number];
export const family_strip: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const recipe_json: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const render_face: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_start: () => void;
