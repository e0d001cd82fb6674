/*
 * Pinned-map control tool. iproute2's tc pins the datapath's maps under
 * /sys/fs/bpf/tc/globals when it loads the object; this tool opens them
 * via bpf(2) and populates the keystore and per-direction config from
 * the bootstrap keystore text format.
 *
 *   mapctl layout                 print the ABI layout string and hash
 *   mapctl check [PIN_DIR]        verify pinned map layouts
 *   mapctl load  [PIN_DIR] KEYS   populate keystore + config (runs check)
 *   mapctl dump  [PIN_DIR]        print keystore records as text
 *
 * Layout gate: key/value sizes of every pinned map must match the ABI
 * structs, and the keystore carries a sentinel record (selector all
 * zero, an impossible real selector since port 0 is rejected) holding
 * the layout hash. `load` writes it; `check` rejects a mismatch, so a
 * loader built against a different ABI revision refuses to touch the
 * maps.
 */
#include <errno.h>
#include <linux/bpf.h>
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <sys/syscall.h>
#include <unistd.h>

#include "../include/modshield_abi.h"
#include "keyfile.h"

#define DEFAULT_PIN_DIR "/sys/fs/bpf/tc/globals"
#define MAX_KEYS 64

static long sys_bpf(int cmd, union bpf_attr *attr)
{
    return syscall(__NR_bpf, cmd, attr, sizeof(*attr));
}

static int obj_get(const char *pin_dir, const char *name)
{
    union bpf_attr attr;
    char path[256];

    snprintf(path, sizeof(path), "%s/%s", pin_dir, name);
    memset(&attr, 0, sizeof(attr));
    attr.pathname = (uint64_t)(unsigned long)path;
    return (int)sys_bpf(BPF_OBJ_GET, &attr);
}

static int map_update(int fd, const void *key, const void *value)
{
    union bpf_attr attr;

    memset(&attr, 0, sizeof(attr));
    attr.map_fd = (uint32_t)fd;
    attr.key = (uint64_t)(unsigned long)key;
    attr.value = (uint64_t)(unsigned long)value;
    attr.flags = BPF_ANY;
    return (int)sys_bpf(BPF_MAP_UPDATE_ELEM, &attr);
}

static int map_lookup(int fd, const void *key, void *value)
{
    union bpf_attr attr;

    memset(&attr, 0, sizeof(attr));
    attr.map_fd = (uint32_t)fd;
    attr.key = (uint64_t)(unsigned long)key;
    attr.value = (uint64_t)(unsigned long)value;
    return (int)sys_bpf(BPF_MAP_LOOKUP_ELEM, &attr);
}

static int map_next_key(int fd, const void *key, void *next)
{
    union bpf_attr attr;

    memset(&attr, 0, sizeof(attr));
    attr.map_fd = (uint32_t)fd;
    attr.key = (uint64_t)(unsigned long)key;
    attr.next_key = (uint64_t)(unsigned long)next;
    return (int)sys_bpf(BPF_MAP_GET_NEXT_KEY, &attr);
}

static int map_info(int fd, struct bpf_map_info *info)
{
    union bpf_attr attr;

    memset(&attr, 0, sizeof(attr));
    attr.info.bpf_fd = (uint32_t)fd;
    attr.info.info = (uint64_t)(unsigned long)info;
    attr.info.info_len = sizeof(*info);
    return (int)sys_bpf(BPF_OBJ_GET_INFO_BY_FD, &attr);
}

static int check_one(const char *pin_dir, const char *name,
                     uint32_t key_size, uint32_t value_size, int *fd_out)
{
    struct bpf_map_info info;
    int fd = obj_get(pin_dir, name);

    if (fd < 0) {
        fprintf(stderr, "error: cannot open pinned map %s/%s: %s\n",
                pin_dir, name, strerror(errno));
        return -1;
    }
    memset(&info, 0, sizeof(info));
    if (map_info(fd, &info) != 0) {
        fprintf(stderr, "error: map info for %s: %s\n", name, strerror(errno));
        close(fd);
        return -1;
    }
    if (info.key_size != key_size || info.value_size != value_size) {
        fprintf(stderr,
                "error: %s layout mismatch: key %u/%u value %u/%u "
                "(pinned/expected)\n",
                name, info.key_size, key_size, info.value_size, value_size);
        close(fd);
        return -1;
    }
    if (fd_out)
        *fd_out = fd;
    else
        close(fd);
    return 0;
}

static void sentinel_record(struct ms_key_sel *sel, struct ms_key_val *val)
{
    uint32_t h = ms_layout_hash();

    memset(sel, 0, sizeof(*sel));
    memset(val, 0, sizeof(*val));
    val->key[0] = (uint8_t)(h >> 24);
    val->key[1] = (uint8_t)(h >> 16);
    val->key[2] = (uint8_t)(h >> 8);
    val->key[3] = (uint8_t)h;
}

static int cmd_check(const char *pin_dir)
{
    struct ms_key_sel sel;
    struct ms_key_val want, have;
    int keys_fd;

    if (check_one(pin_dir, "modshield_keys", sizeof(struct ms_key_sel),
                  sizeof(struct ms_key_val), &keys_fd) != 0 ||
        check_one(pin_dir, "modshield_flows", sizeof(struct ms_flow_key),
                  sizeof(struct ms_flow_state), NULL) != 0 ||
        check_one(pin_dir, "modshield_cfg", sizeof(uint32_t),
                  sizeof(struct ms_cfg), NULL) != 0)
        return 1;
    sentinel_record(&sel, &want);
    if (map_lookup(keys_fd, &sel, &have) == 0 &&
        memcmp(have.key, want.key, 4) != 0) {
        fprintf(stderr,
                "error: layout hash mismatch (pinned %02x%02x%02x%02x, "
                "built %02x%02x%02x%02x); rebuild loader and datapath "
                "from the same ABI\n",
                have.key[0], have.key[1], have.key[2], have.key[3],
                want.key[0], want.key[1], want.key[2], want.key[3]);
        close(keys_fd);
        return 1;
    }
    close(keys_fd);
    printf("pinned maps at %s match ABI %s (hash %08x)\n",
           pin_dir, MS_LAYOUT_DESC, ms_layout_hash());
    return 0;
}

static int parse_cfg_flags(int argc, char **argv, int first,
                           struct ms_cfg *cfg)
{
    int i;

    for (i = first; i < argc; i++) {
        if (strcmp(argv[i], "--magic") == 0 && i + 1 < argc) {
            cfg->magic_pid = (uint16_t)strtoul(argv[++i], NULL, 16);
        } else if (strcmp(argv[i], "--port") == 0 && i + 1 < argc) {
            cfg->modbus_port = (uint16_t)atoi(argv[++i]);
        } else if (strcmp(argv[i], "--max-adus") == 0 && i + 1 < argc) {
            cfg->max_adus = (uint8_t)atoi(argv[++i]);
        } else if (strcmp(argv[i], "--policy-default") == 0 && i + 1 < argc) {
            i++;
            if (strcmp(argv[i], "strict") == 0)
                cfg->policy_default = MS_POLICY_STRICT;
            else if (strcmp(argv[i], "permissive") == 0)
                cfg->policy_default = MS_POLICY_PERMISSIVE;
            else
                return -1;
        } else {
            return -1;
        }
    }
    if (cfg->magic_pid == 0 || cfg->max_adus < 1 ||
        cfg->max_adus > MS_MAX_ADUS_CAP)
        return -1;
    return 0;
}

static int cmd_load(const char *pin_dir, const char *keyfile,
                    int argc, char **argv, int first)
{
    static struct ms_key_entry entries[MAX_KEYS];
    struct ms_cfg cfg;
    struct ms_key_sel sel;
    struct ms_key_val val;
    char errbuf[256];
    uint32_t dir;
    int keys_fd, cfg_fd, n, i;

    memset(&cfg, 0, sizeof(cfg));
    cfg.magic_pid = MS_DEFAULT_MAGIC_PID;
    cfg.modbus_port = MS_DEFAULT_PORT;
    cfg.policy_default = MS_POLICY_PERMISSIVE;
    cfg.max_adus = MS_MAX_ADUS;
    if (parse_cfg_flags(argc, argv, first, &cfg) != 0) {
        fprintf(stderr, "error: bad config flag\n");
        return 2;
    }

    if (cmd_check(pin_dir) != 0)
        return 1;

    n = ms_keyfile_load(keyfile, entries, MAX_KEYS, errbuf, sizeof(errbuf));
    if (n < 0) {
        fprintf(stderr, "error: %s\n", errbuf);
        return 1;
    }

    keys_fd = obj_get(pin_dir, "modshield_keys");
    cfg_fd = obj_get(pin_dir, "modshield_cfg");
    if (keys_fd < 0 || cfg_fd < 0) {
        fprintf(stderr, "error: cannot reopen pinned maps\n");
        return 1;
    }

    sentinel_record(&sel, &val);
    if (map_update(keys_fd, &sel, &val) != 0) {
        fprintf(stderr, "error: writing layout sentinel: %s\n",
                strerror(errno));
        return 1;
    }
    for (i = 0; i < n; i++) {
        if (map_update(keys_fd, &entries[i].sel, &entries[i].val) != 0) {
            fprintf(stderr, "error: inserting key record %d: %s\n", i,
                    strerror(errno));
            return 1;
        }
    }
    for (dir = 0; dir < 2; dir++) {
        cfg.direction = (uint8_t)dir;
        if (map_update(cfg_fd, &dir, &cfg) != 0) {
            fprintf(stderr, "error: writing config[%u]: %s\n", dir,
                    strerror(errno));
            return 1;
        }
    }
    printf("loaded %d key records; magic=0x%04X port=%u "
           "policy_default=%s max_adus=%u\n",
           n, cfg.magic_pid, cfg.modbus_port,
           cfg.policy_default == MS_POLICY_STRICT ? "strict" : "permissive",
           cfg.max_adus);
    close(keys_fd);
    close(cfg_fd);
    return 0;
}

static int cmd_dump(const char *pin_dir)
{
    struct ms_key_sel key, next;
    struct ms_key_val val;
    struct in_addr a, b;
    char a_s[32];
    int fd = obj_get(pin_dir, "modshield_keys");
    int have_key = 0;
    int i;

    if (fd < 0) {
        fprintf(stderr, "error: cannot open pinned keystore: %s\n",
                strerror(errno));
        return 1;
    }
    while (map_next_key(fd, have_key ? &key : NULL, &next) == 0) {
        key = next;
        have_key = 1;
        if (map_lookup(fd, &key, &val) != 0)
            continue;
        if (key.peer_a == 0 && key.peer_b == 0 && key.server_port == 0)
            continue;   /* layout sentinel */
        a.s_addr = key.peer_a;
        b.s_addr = key.peer_b;
        snprintf(a_s, sizeof(a_s), "%s", inet_ntoa(a));
        printf("%s %s %u %s ", a_s, inet_ntoa(b), key.server_port,
               val.policy == MS_POLICY_STRICT ? "strict" : "permissive");
        for (i = 0; i < 32; i++)
            printf("%02x", val.key[i]);
        printf("\n");
    }
    close(fd);
    return 0;
}

int main(int argc, char **argv)
{
    const char *pin_dir = DEFAULT_PIN_DIR;

    if (argc >= 2 && strcmp(argv[1], "layout") == 0) {
        printf("%s %08x\n", MS_LAYOUT_DESC, ms_layout_hash());
        return 0;
    }
    if (argc >= 2 && strcmp(argv[1], "check") == 0) {
        if (argc >= 3)
            pin_dir = argv[2];
        return cmd_check(pin_dir);
    }
    if (argc >= 4 && strcmp(argv[1], "load") == 0) {
        return cmd_load(argv[2], argv[3], argc, argv, 4);
    }
    if (argc >= 2 && strcmp(argv[1], "dump") == 0) {
        if (argc >= 3)
            pin_dir = argv[2];
        return cmd_dump(pin_dir);
    }
    fprintf(stderr,
            "usage: mapctl layout\n"
            "       mapctl check [PIN_DIR]\n"
            "       mapctl load PIN_DIR KEYS.TXT [--magic HEX16] [--port N]\n"
            "                   [--policy-default strict|permissive] "
            "[--max-adus N]\n"
            "       mapctl dump [PIN_DIR]\n");
    return 2;
}
