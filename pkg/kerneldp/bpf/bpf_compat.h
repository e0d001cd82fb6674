/*
 * Minimal BPF program support: section macro, helper bindings and the
 * iproute2 map definition. Only what the TC program needs, so the build
 * depends on nothing beyond the kernel uapi headers.
 */
#ifndef BPF_COMPAT_H
#define BPF_COMPAT_H

#include <linux/types.h>
#include <linux/bpf.h>

#define SEC(name) __attribute__((section(name), used))

#ifndef __always_inline
#define __always_inline inline __attribute__((always_inline))
#endif

/* Helper bindings by call number, the classic pre-libbpf idiom. */
static void *(*bpf_map_lookup_elem)(void *map, const void *key) =
    (void *)BPF_FUNC_map_lookup_elem;
static long (*bpf_map_update_elem)(void *map, const void *key,
                                   const void *value, __u64 flags) =
    (void *)BPF_FUNC_map_update_elem;
static long (*bpf_map_delete_elem)(void *map, const void *key) =
    (void *)BPF_FUNC_map_delete_elem;
static long (*bpf_skb_load_bytes)(const void *skb, __u32 offset, void *to,
                                  __u32 len) =
    (void *)BPF_FUNC_skb_load_bytes;
static long (*bpf_skb_store_bytes)(void *skb, __u32 offset, const void *from,
                                   __u32 len, __u64 flags) =
    (void *)BPF_FUNC_skb_store_bytes;
static long (*bpf_l4_csum_replace)(void *skb, __u32 offset, __u64 from,
                                   __u64 to, __u64 flags) =
    (void *)BPF_FUNC_l4_csum_replace;

/*
 * iproute2 ELF map definition ("maps" section). PIN_GLOBAL_NS pins under
 * /sys/fs/bpf/tc/globals/<map name> so the loader and both attachment
 * points share one object.
 */
#define PIN_NONE 0
#define PIN_OBJECT_NS 1
#define PIN_GLOBAL_NS 2

struct bpf_elf_map {
    __u32 type;
    __u32 size_key;
    __u32 size_value;
    __u32 max_elem;
    __u32 flags;
    __u32 id;
    __u32 pinning;
    __u32 inner_id;
    __u32 inner_idx;
};

#endif /* BPF_COMPAT_H */
