/* tslint:disable */
/* eslint-disable */

/**
 * A synthetic scene and the network being fitted to it.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    done(): boolean;
    /**
     * RGBA bytes of the frame at camera position `pos`, in view units.
     */
    frame(pos: number, kind: FrameKind): Uint8Array;
    height(): number;
    iteration(): bigint;
    /**
     * Generates `kind` ("translate_sprite", "two_layer_parallax" or "large_disparity")
     * and prepares a trainer with the desk settings.
     */
    constructor(kind: string, seed: number);
    /**
     * Runs up to `steps` iterations and returns the last reconstruction loss.
     */
    train(steps: number): number;
    views(): number;
    width(): number;
}

/**
 * What `Demo::frame` draws.
 */
export enum FrameKind {
    Network = 0,
    Crossfade = 1,
    Truth = 2,
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_done: (a: number) => number;
    readonly demo_frame: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_height: (a: number) => number;
    readonly demo_iteration: (a: number) => bigint;
    readonly demo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_train: (a: number, b: number) => [number, number, number];
    readonly demo_views: (a: number) => number;
    readonly demo_width: (a: number) => number;
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
